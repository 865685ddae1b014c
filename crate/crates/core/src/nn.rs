//! Small parameterized building blocks shared by the model modules.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::ops::conv::Conv2dSpec;
use crate::params::{Init, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: Conv2dSpec,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        spec: Conv2dSpec,
        gain: f64,
    ) -> Self {
        let cpg = if spec.groups == 1 { cin } else { 1 };
        let weight = store.add(format!("{name}.weight"), init.conv([cout, cpg, kernel.0, kernel.1], gain));
        let bias = Some(store.add(format!("{name}.bias"), Tensor::zeros(&[cout])));
        Self { weight, bias, spec }
    }

    pub fn same(store: &mut ParamStore, init: &mut Init, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        Self::new(store, init, name, cin, cout, (k, k), Conv2dSpec::same(k, k), 1.0)
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let w = tape.param(self.weight);
        let b = self.bias.map(|b| tape.param(b));
        tape.conv2d(x, w, b, self.spec)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut v = alloc::vec![self.weight];
        v.extend(self.bias);
        v
    }
}

/// Per-token normalization over channels with learned gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[channels], 1.0)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[channels])),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        tape.layer_norm(x, g, b)
    }
}

/// `relu(conv(relu(conv(x))) + shortcut(x))`.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub conv1: Conv,
    pub conv2: Conv,
    pub shortcut: Option<Conv>,
}

impl ResidualBlock {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
    ) -> Self {
        let conv1 = Conv::new(
            store,
            init,
            &format!("{name}.conv1"),
            cin,
            cout,
            (3, 3),
            Conv2dSpec::strided(3, stride),
            1.0,
        );
        // The second conv of a residual branch starts small so deep stacks
        // begin close to their shortcut path.
        let conv2 = Conv::new(store, init, &format!("{name}.conv2"), cout, cout, (3, 3), Conv2dSpec::same(3, 3), 0.5);
        let shortcut = (cin != cout || stride != 1).then(|| {
            Conv::new(
                store,
                init,
                &format!("{name}.shortcut"),
                cin,
                cout,
                (1, 1),
                Conv2dSpec {
                    stride,
                    pad_h: 0,
                    pad_w: 0,
                    groups: 1,
                },
                1.0,
            )
        });
        Self { conv1, conv2, shortcut }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Var {
        let y = self.conv1.forward(tape, x);
        let y = tape.relu(y);
        let y = self.conv2.forward(tape, y);
        let s = match &self.shortcut {
            Some(c) => c.forward(tape, x),
            None => x,
        };
        let sum = tape.add(y, s);
        tape.relu(sum)
    }
}
