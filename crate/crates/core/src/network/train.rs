use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::mnist::{sample_batch, Dataset};
use crate::network::Network;
use crate::optim::{minibatch_gradient, sgd_apply, stack, Hyperparams};
use crate::rng::{Rng, STREAM_SAMPLING};

/// Receives the minibatch loss every `log_every` steps.
pub trait LossSink {
    fn record(&mut self, step: usize, raw_loss: f64) -> Result<()>;
}

impl LossSink for Vec<(usize, f64)> {
    fn record(&mut self, step: usize, raw_loss: f64) -> Result<()> {
        self.push((step, raw_loss));
        Ok(())
    }
}

/// Runs `hyper.steps` rounds of sample, back-propagate and update.
///
/// Minibatches are drawn uniformly with replacement from a sampling stream
/// seeded by `hyper.seed`, so the whole run is a pure function of the network's
/// initial state, the data and `hyper`.
pub fn train(net: &mut Network, data: &Dataset, hyper: &Hyperparams, sink: &mut dyn LossSink) -> Result<()> {
    hyper.validate()?;
    if data.is_empty() {
        return Err(Error::param("cannot train on an empty dataset"));
    }
    let mut sampler = Rng::with_stream(hyper.seed, STREAM_SAMPLING);
    net.set_mode(Mode::Train);
    for step in 1..=hyper.steps {
        let batch = sample_batch(data, hyper.batch_size, &mut sampler)?;
        let (grads, loss) = minibatch_gradient(net, &batch)?;
        sgd_apply(net, &grads, hyper.eta)?;
        if step % hyper.log_every == 0 {
            sink.record(step, loss)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// Fraction of examples whose highest output matches the label.
    pub accuracy: f64,
    /// Quadratic cost over the whole set.
    pub cost: f64,
}

const EVAL_CHUNK: usize = 100;

/// Inference-mode accuracy and mean quadratic cost. Prediction ties go to the
/// lowest class index.
pub fn evaluate(net: &Network, data: &Dataset) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::param("cannot evaluate on an empty dataset"));
    }
    let mut correct = 0usize;
    let mut sq = 0.0;
    for start in (0..data.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(data.len());
        let xs: Vec<_> = data.images()[start..end].iter().collect();
        let out = net.predict(&stack(&xs)?)?;
        let k = out.shape()[1];
        for (row, label) in out.data().chunks_exact(k).zip(&data.labels()[start..end]) {
            if label.len() != k {
                return Err(Error::shape(format!(
                    "label width {} does not match network output {k}",
                    label.len()
                )));
            }
            if argmax(row) == argmax(label.data()) {
                correct += 1;
            }
            sq += row.iter().zip(label.data()).map(|(a, y)| (y - a) * (y - a)).sum::<f64>();
        }
    }
    let n = data.len() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        cost: sq / (2.0 * n),
    })
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
