use clap::Parser;
use xcaflow::cli::{run, Cli};
use xcaflow::error::{exit_code, EXIT_OK, EXIT_USAGE};

#[global_allocator]
static ALLOC: xcaflow::meter::CountingAlloc = xcaflow::meter::CountingAlloc;

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
        std::process::exit(exit_code(&e));
    }
}
