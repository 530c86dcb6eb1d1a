//! Small reusable learnable layers built on the tape.

use crate::params::{kaiming_uniform, zeros, Forward, ParamStore};
use crate::scalar::Scalar;
use crate::tape::VarId;
use rand_chacha::ChaCha8Rng;

/// Conv2d with bias; parameters live in the store under `{name}.w` / `{name}.b`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn register<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut ChaCha8Rng,
        name: impl Into<String>,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let name = name.into();
        let fan_in = cin * k * k;
        store.insert(
            format!("{name}.w"),
            kaiming_uniform(&[cout, cin, k, k], fan_in, rng),
        );
        store.insert(format!("{name}.b"), zeros(&[cout]));
        Conv2d {
            name,
            cin,
            cout,
            k,
            stride,
            pad,
        }
    }

    pub fn forward<S: Scalar>(&self, f: &mut Forward<S>, x: VarId) -> VarId {
        let w = f.param(&format!("{}.w", self.name));
        let b = f.param(&format!("{}.b", self.name));
        f.g.conv2d_bias(x, w, b, self.stride, self.pad)
    }
}

/// Dense layer `y = W x + b` applied to (N, In) activations.
#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn register<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut ChaCha8Rng,
        name: impl Into<String>,
        input: usize,
        output: usize,
    ) -> Self {
        let name = name.into();
        store.insert(
            format!("{name}.w"),
            kaiming_uniform(&[output, input], input, rng),
        );
        store.insert(format!("{name}.b"), zeros(&[output]));
        Linear {
            name,
            input,
            output,
        }
    }

    /// x: (N, In) -> (N, Out)
    pub fn forward<S: Scalar>(&self, f: &mut Forward<S>, x: VarId) -> VarId {
        let w = f.param(&format!("{}.w", self.name));
        let b = f.param(&format!("{}.b", self.name));
        let wt = f.g.permute(w, &[1, 0]);
        let y = f.g.matmul2(x, wt);
        f.g.add(y, b)
    }
}

/// Two 3x3 conv + ReLU stages.
#[derive(Clone, Debug)]
pub struct ConvBlock {
    pub c1: Conv2d,
    pub c2: Conv2d,
}

impl ConvBlock {
    pub fn register<S: Scalar>(
        store: &mut ParamStore<S>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cin: usize,
        cout: usize,
        first_stride: usize,
    ) -> Self {
        ConvBlock {
            c1: Conv2d::register(store, rng, format!("{name}.c1"), cin, cout, 3, first_stride, 1),
            c2: Conv2d::register(store, rng, format!("{name}.c2"), cout, cout, 3, 1, 1),
        }
    }

    pub fn forward<S: Scalar>(&self, f: &mut Forward<S>, x: VarId) -> VarId {
        let y = self.c1.forward(f, x);
        let y = f.g.relu(y);
        let y = self.c2.forward(f, y);
        f.g.relu(y)
    }
}
