use rand::Rng;

use super::{BatchNorm, Conv2d, Mode, Param, Parameterized, SeBlock};
use crate::error::{Error, Result};
use crate::tensor::{relu, relu_backward, ConvSpec, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResidualBlockConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub attach_se: bool,
    pub se_reduction: usize,
}

impl ResidualBlockConfig {
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        ResidualBlockConfig {
            in_channels,
            out_channels,
            attach_se: false,
            se_reduction: 16,
        }
    }

    pub fn with_se(mut self, reduction: usize) -> Self {
        self.attach_se = true;
        self.se_reduction = reduction;
        self
    }

    /// A 1×1 projection is used on the skip path whenever channels change.
    pub fn use_projection(&self) -> bool {
        self.in_channels != self.out_channels
    }
}

/// Residual block with two 3×3 convolutions:
///
/// ```text
/// F(X) = ReLU(BN2(Conv2(ReLU(BN1(Conv1(X))))))
/// Y    = SE(F(X)) + skip(X)
/// ```
///
/// `skip` is the identity or, on a channel change, 1×1 conv + BN. The SE stage
/// is present only when configured. Nothing follows the addition.
#[derive(Debug, Clone)]
pub struct ResidualBlock<T> {
    pub cfg: ResidualBlockConfig,
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm<T>,
    pub se: Option<SeBlock<T>>,
    pub projection: Option<(Conv2d<T>, BatchNorm<T>)>,
    pre_act: Option<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, cfg: ResidualBlockConfig, rng: &mut R) -> Result<Self> {
        if cfg.in_channels == 0 || cfg.out_channels == 0 {
            return Err(Error::Config(format!("{name}: channel counts must be positive")));
        }
        let (ci, co) = (cfg.in_channels, cfg.out_channels);
        let conv1 = Conv2d::new(&format!("{name}.conv1"), ConvSpec::same(3, ci, co), rng);
        let bn1 = BatchNorm::new(&format!("{name}.bn1"), co);
        let conv2 = Conv2d::new(&format!("{name}.conv2"), ConvSpec::same(3, co, co), rng);
        let bn2 = BatchNorm::new(&format!("{name}.bn2"), co);
        let se = if cfg.attach_se {
            Some(SeBlock::new(&format!("{name}.se"), co, cfg.se_reduction, rng)?)
        } else {
            None
        };
        let projection = cfg.use_projection().then(|| {
            (
                Conv2d::new(&format!("{name}.proj.conv"), ConvSpec::same(1, ci, co), rng),
                BatchNorm::new(&format!("{name}.proj.bn"), co),
            )
        });
        Ok(ResidualBlock {
            cfg,
            conv1,
            bn1,
            conv2,
            bn2,
            se,
            projection,
            pre_act: None,
        })
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (_, _, _, c) = x.nhwc("residual_block")?;
        if c != self.cfg.in_channels {
            return Err(Error::DimensionMismatch {
                op: "residual_block",
                axis: "input channels",
                expected: self.cfg.in_channels,
                actual: c,
            });
        }
        let a1 = self.bn1.forward(&self.conv1.forward(x)?, mode)?;
        let a2 = self.bn2.forward(&self.conv2.forward(&relu(&a1))?, mode)?;
        let mut branch = relu(&a2);
        if let Some(se) = &mut self.se {
            branch = se.forward(&branch)?;
        }
        self.pre_act = Some((a1, a2));
        match &mut self.projection {
            None => branch.add_assign(x),
            Some((conv, bn)) => branch.add_assign(&bn.forward(&conv.forward(x)?, mode)?),
        }
        Ok(branch)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let (a1, a2) = self
            .pre_act
            .take()
            .ok_or_else(|| Error::precondition("residual_backward", "backward called before forward"))?;
        let mut g = grad_out.clone();
        if let Some(se) = &mut self.se {
            g = se.backward(&g)?;
        }
        let g = self.bn2.backward(&relu_backward(&a2, &g))?;
        let g = self.conv2.backward(&g)?;
        let g = self.bn1.backward(&relu_backward(&a1, &g))?;
        let mut dx = self.conv1.backward(&g)?;
        match &mut self.projection {
            None => dx.add_assign(grad_out),
            Some((conv, bn)) => dx.add_assign(&conv.backward(&bn.backward(grad_out)?)?),
        }
        Ok(dx)
    }
}

impl<T> Parameterized<T> for ResidualBlock<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.conv1.visit_params(f);
        self.bn1.visit_params(f);
        self.conv2.visit_params(f);
        self.bn2.visit_params(f);
        if let Some(se) = &self.se {
            se.visit_params(f);
        }
        if let Some((conv, bn)) = &self.projection {
            conv.visit_params(f);
            bn.visit_params(f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.conv1.visit_params_mut(f);
        self.bn1.visit_params_mut(f);
        self.conv2.visit_params_mut(f);
        self.bn2.visit_params_mut(f);
        if let Some(se) = &mut self.se {
            se.visit_params_mut(f);
        }
        if let Some((conv, bn)) = &mut self.projection {
            conv.visit_params_mut(f);
            bn.visit_params_mut(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::gradcheck_util::{dot, worst_input_error, worst_param_error};
    use crate::rng::stream;
    use crate::testutil::rand_tensor;

    fn zero_branch<T: Scalar>(block: &mut ResidualBlock<T>) {
        block.conv1.weight.value.fill(T::zero());
        block.conv2.weight.value.fill(T::zero());
        for bn in [&mut block.bn1, &mut block.bn2] {
            bn.gamma.value.fill(T::zero());
            bn.beta.value.fill(T::zero());
        }
    }

    #[test]
    fn zeroed_branch_with_identity_skip_is_exact_identity() {
        for mode in [Mode::Train, Mode::Infer] {
            let mut block = ResidualBlock::<f32>::new("b", ResidualBlockConfig::new(6, 6), &mut stream(1, &[])).unwrap();
            zero_branch(&mut block);
            let x = rand_tensor(&[2, 4, 4, 6], 2);
            assert_eq!(block.forward(&x, mode).unwrap(), x);
        }
    }

    #[test]
    fn shapes_for_fourcropnet_blocks() {
        let mut rng = stream(3, &[]);
        let x = Tensor::<f32>::zeros(&[1, 112, 112, 32]);
        let mut same = ResidualBlock::new("block1", ResidualBlockConfig::new(32, 32), &mut rng).unwrap();
        assert!(same.projection.is_none());
        assert_eq!(same.forward(&x, Mode::Infer).unwrap().shape(), &[1, 112, 112, 32]);
        let mut wide = ResidualBlock::new("block2", ResidualBlockConfig::new(32, 64), &mut rng).unwrap();
        assert!(wide.projection.is_some());
        assert_eq!(wide.forward(&x, Mode::Infer).unwrap().shape(), &[1, 112, 112, 64]);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let mut block = ResidualBlock::<f32>::new("b", ResidualBlockConfig::new(4, 8), &mut stream(1, &[])).unwrap();
        let x = Tensor::zeros(&[1, 4, 4, 3]);
        assert!(matches!(block.forward(&x, Mode::Infer), Err(Error::DimensionMismatch { expected: 4, actual: 3, .. })));
    }

    #[test]
    fn gradcheck_projection_and_se_block() {
        for mode in [Mode::Infer, Mode::Train] {
            let cfg = ResidualBlockConfig::new(3, 8).with_se(4);
            let mut block = ResidualBlock::<f64>::new("b", cfg, &mut stream(5, &[])).unwrap();
            let x = rand_tensor(&[2, 4, 4, 3], 6);
            let r = rand_tensor(&[2, 4, 4, 8], 7);
            block.forward(&x, mode).unwrap();
            let dx = block.backward(&r).unwrap();
            let snapshot = block.clone();
            let wp = worst_param_error(&mut block, |b| dot(&b.clone().forward(&x, mode).unwrap(), &r));
            let wx = worst_input_error(&x, &dx, |xi| dot(&snapshot.clone().forward(xi, mode).unwrap(), &r));
            assert!(wp < 1e-4, "{mode:?} params {wp}");
            assert!(wx < 1e-4, "{mode:?} input {wx}");
        }
    }

    #[test]
    fn parameter_names_are_unique_and_ordered() {
        let block = ResidualBlock::<f32>::new("block3", ResidualBlockConfig::new(64, 128).with_se(16), &mut stream(1, &[])).unwrap();
        let mut names = Vec::new();
        block.visit_params(&mut |p| names.push(p.name.clone()));
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
        assert_eq!(names[0], "block3.conv1.weight");
        assert!(names.contains(&"block3.se.w1".to_string()));
        assert!(names.contains(&"block3.proj.bn.running_var".to_string()));
    }
}
