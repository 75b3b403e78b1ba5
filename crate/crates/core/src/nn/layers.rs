use rand::Rng;

use super::conv::ConvSpec;
use super::graph::{Graph, Var};
use super::params::{Init, ParamId, ParamStore};

#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: ConvSpec,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new<R: Rng>(
        init: &mut Init<'_, R>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        spec: ConvSpec,
        bias: bool,
    ) -> Self {
        let mut sub = init.sub(name);
        let per_group = if spec.groups > 1 { 1 } else { cin };
        let weight = sub.uniform("weight", &[cout, per_group, kernel], per_group * kernel);
        let bias = bias.then(|| sub.constant("bias", &[cout], 0.0));
        Conv1d { weight, bias, spec, kernel }
    }

    /// Pointwise (kernel 1) convolution with bias.
    pub fn pointwise<R: Rng>(init: &mut Init<'_, R>, name: &str, cin: usize, cout: usize) -> Self {
        Self::new(init, name, cin, cout, 1, ConvSpec::default(), true)
    }

    /// Depthwise convolution keeping the length ("same" padding for odd kernels).
    pub fn depthwise<R: Rng>(init: &mut Init<'_, R>, name: &str, channels: usize, kernel: usize, dilation: usize) -> Self {
        let pad = dilation * (kernel - 1);
        let spec = ConvSpec { stride: 1, pad_left: pad / 2, pad_right: pad - pad / 2, dilation, groups: channels };
        Self::new(init, name, channels, channels, kernel, spec, true)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = self.bias.map(|b| g.param(store, b));
        g.conv1d(x, w, b, self.spec)
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose1d {
    pub weight: ParamId,
    pub stride: usize,
    pub kernel: usize,
}

impl ConvTranspose1d {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize) -> Self {
        let mut sub = init.sub(name);
        let weight = sub.uniform("weight", &[cin, cout, kernel], cin * kernel / stride.max(1));
        ConvTranspose1d { weight, stride, kernel }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        g.conv_transpose1d(x, w, self.stride)
    }
}

/// Dense layer on a `[1, in]` row vector.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, name: &str, input: usize, output: usize) -> Self {
        let mut sub = init.sub(name);
        let weight = sub.uniform("weight", &[output, input], input);
        let bias = sub.constant("bias", &[output], 0.0);
        Linear { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(x, w, false, true);
        let bt = g.reshape(b, &[1, store.value(self.bias).len()]);
        g.add(y, bt)
    }
}

#[derive(Clone, Debug)]
pub struct PRelu {
    pub slope: ParamId,
}

impl PRelu {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, name: &str) -> Self {
        PRelu { slope: init.sub(name).constant("slope", &[1], 0.25) }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let a = g.param(store, self.slope);
        g.prelu(x, a)
    }
}

#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl GroupNorm {
    pub fn new<R: Rng>(init: &mut Init<'_, R>, name: &str, channels: usize, groups: usize) -> Self {
        let mut sub = init.sub(name);
        let gamma = sub.constant("gamma", &[channels], 1.0);
        let beta = sub.constant("beta", &[channels], 0.0);
        GroupNorm { gamma, beta, groups }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let gm = g.param(store, self.gamma);
        let bt = g.param(store, self.beta);
        g.group_norm(x, gm, bt, self.groups)
    }
}
