use rand::Rng;

use crate::error::Result;
use crate::tensor::{join, ConvParams, Params, Tensor};

fn conv3(rng: &mut impl Rng, c_out: usize, c_in: usize, stride: usize) -> ConvParams {
    ConvParams::kaiming(rng, c_out, c_in, (3, 3), stride, (1, 1), true)
}

/// `relu(x + conv2(relu(conv1(x))))`.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub conv1: ConvParams,
    pub conv2: ConvParams,
}

impl ResBlock {
    pub fn new(rng: &mut impl Rng, channels: usize) -> Self {
        let conv1 = conv3(rng, channels, channels, 1);
        let mut conv2 = conv3(rng, channels, channels, 1);
        // Start the residual branch small so stacked blocks stay near identity.
        conv2.weight = conv2.weight.scale(0.5).to_parameter();
        ResBlock { conv1, conv2 }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.conv2.forward(&self.conv1.forward(x)?.relu())?;
        Ok(x.add(&y)?.relu())
    }
}

impl Params for ResBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
    }
}

/// Stride-2 3×3 conv with ReLU, then a residual block.
#[derive(Clone, Debug)]
pub struct EncoderStage {
    pub down: ConvParams,
    pub block: ResBlock,
}

impl EncoderStage {
    pub fn new(rng: &mut impl Rng, c_in: usize, c_out: usize) -> Self {
        EncoderStage {
            down: conv3(rng, c_out, c_in, 2),
            block: ResBlock::new(rng, c_out),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.block.forward(&self.down.forward(x)?.relu())
    }
}

impl Params for EncoderStage {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.down.visit(&join(prefix, "down"), f);
        self.block.visit(&join(prefix, "block"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.down.visit_mut(&join(prefix, "down"), f);
        self.block.visit_mut(&join(prefix, "block"), f);
    }
}

/// 3×3 channel fuse with ReLU, then a residual block.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub fuse: ConvParams,
    pub block: ResBlock,
}

impl DecoderBlock {
    pub fn new(rng: &mut impl Rng, c_in: usize, c_out: usize) -> Self {
        DecoderBlock {
            fuse: conv3(rng, c_out, c_in, 1),
            block: ResBlock::new(rng, c_out),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.block.forward(&self.fuse.forward(x)?.relu())
    }
}

impl Params for DecoderBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.fuse.visit(&join(prefix, "fuse"), f);
        self.block.visit(&join(prefix, "block"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.fuse.visit_mut(&join(prefix, "fuse"), f);
        self.block.visit_mut(&join(prefix, "block"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::init::{rng, uniform};
    use crate::tensor::Shape;

    #[test]
    fn zero_branch_is_relu_identity() {
        let mut b = ResBlock::new(&mut rng(1), 4);
        b.conv2.visit_mut("", &mut |_, t| *t = Tensor::zeros(t.shape()).to_parameter());
        let x = uniform(&mut rng(2), Shape::new(1, 4, 5, 5), -1.0, 1.0);
        assert_eq!(b.forward(&x).unwrap().to_vec(), x.relu().to_vec());
    }

    #[test]
    fn stage_halves_resolution() {
        let s = EncoderStage::new(&mut rng(3), 3, 8);
        let y = s.forward(&Tensor::zeros(Shape::new(2, 3, 16, 12))).unwrap();
        assert_eq!(y.shape(), Shape::new(2, 8, 8, 6));
    }
}
