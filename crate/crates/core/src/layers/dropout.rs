use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Inverted dropout: in training each element survives with probability
/// `keep_prob` and survivors are scaled by `1 / keep_prob`; at inference the
/// layer is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutLayer {
    keep_prob: f64,
    mode: Mode,
    mask: Option<Tensor>,
}

pub(crate) fn check_keep_prob(keep_prob: f64) -> Result<()> {
    if keep_prob > 0.0 && keep_prob <= 1.0 {
        Ok(())
    } else {
        Err(Error::param(format!(
            "keep_prob must lie in (0, 1], got {keep_prob}"
        )))
    }
}

impl DropoutLayer {
    pub fn new(keep_prob: f64) -> Result<Self> {
        check_keep_prob(keep_prob)?;
        Ok(Self {
            keep_prob,
            mode: Mode::Train,
            mask: None,
        })
    }

    pub fn keep_prob(&self) -> f64 {
        self.keep_prob
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn mask(&self) -> Option<&Tensor> {
        self.mask.as_ref()
    }

    pub fn forward(&mut self, input: &Tensor, rng: Option<&mut Rng>) -> Result<Tensor> {
        match self.mode {
            Mode::Infer => {
                self.mask = None;
                Ok(input.clone())
            }
            Mode::Train => {
                let rng = rng.ok_or_else(|| Error::param("training-mode dropout needs an rng"))?;
                let scale = 1.0 / self.keep_prob;
                let mut mask = Tensor::zeros_like(input);
                for m in mask.data_mut() {
                    if rng.uniform() < self.keep_prob {
                        *m = scale;
                    }
                }
                let out = input.mul(&mask)?;
                self.mask = Some(mask);
                Ok(out)
            }
        }
    }

    pub fn backward(&self, delta: &Tensor) -> Result<Tensor> {
        let mask = self
            .mask
            .as_ref()
            .ok_or_else(|| Error::state("dropout backward without a cached training mask"))?;
        delta.mul(mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keep_all_is_identity() {
        let x = Tensor::gaussian_fill(&[50], 0.0, 1.0, &mut Rng::new(1)).unwrap();
        let mut d = DropoutLayer::new(1.0).unwrap();
        assert_eq!(d.forward(&x, Some(&mut Rng::new(2))).unwrap(), x);
        assert!(d.mask().unwrap().data().iter().all(|&m| m == 1.0));
    }

    #[test]
    fn infer_is_identity() {
        let x = Tensor::gaussian_fill(&[50], 0.0, 1.0, &mut Rng::new(1)).unwrap();
        let mut d = DropoutLayer::new(0.5).unwrap();
        d.set_mode(Mode::Infer);
        assert_eq!(d.forward(&x, None).unwrap(), x);
    }

    #[test]
    fn mask_values_and_expectation() {
        let x = Tensor::filled(&[100_000], 1.0).unwrap();
        let mut d = DropoutLayer::new(0.5).unwrap();
        let y = d.forward(&x, Some(&mut Rng::new(99))).unwrap();
        assert!(d.mask().unwrap().data().iter().all(|&m| m == 0.0 || m == 2.0));
        // Output mean has standard error 1/sqrt(1e5) ~ 0.0032; the band is ~6 SE.
        let mean = y.sum() / 1e5;
        assert!((0.98..=1.02).contains(&mean), "{mean}");
        let back = d.backward(&Tensor::filled(&[100_000], 3.0).unwrap()).unwrap();
        assert_eq!(back, d.mask().unwrap().scale(3.0));
    }

    #[test]
    fn errors() {
        assert!(matches!(DropoutLayer::new(0.0), Err(Error::Param(_))));
        assert!(matches!(DropoutLayer::new(1.5), Err(Error::Param(_))));
        let mut d = DropoutLayer::new(0.5).unwrap();
        assert!(matches!(d.backward(&Tensor::zeros(&[2]).unwrap()), Err(Error::State(_))));
        assert!(d.forward(&Tensor::zeros(&[2]).unwrap(), None).is_err());
    }
}
