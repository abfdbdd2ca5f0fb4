//! Split-learning message choreography between passive parties and the
//! active party.
//!
//! A [`PassiveParty`] owns its feature columns and a local model and never
//! sees a label: the only thing that flows toward it is a
//! [`CutMessageDown`] carrying example indices and cut-layer gradients.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, AdamState, ForwardCache, Init, Matrix, MlpParams};

/// Cut-layer values of one party for one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutMessageUp {
    pub party: usize,
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

/// Cut-layer gradients sent back to one party for one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutMessageDown {
    pub party: usize,
    pub indices: Vec<usize>,
    pub grad: Vec<f64>,
}

/// How party outputs combine into the cut-layer value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregator {
    /// Single passive party; its output is the cut layer.
    Identity,
    /// Element-wise mean over parties.
    Average,
}

impl Aggregator {
    pub fn for_parties(p: usize) -> Self {
        if p == 1 {
            Aggregator::Identity
        } else {
            Aggregator::Average
        }
    }

    fn check(self, parties: usize) -> Result<()> {
        match (self, parties) {
            (_, 0) => Err(Error::Protocol("no passive parties".into())),
            (Aggregator::Identity, p) if p != 1 => Err(Error::Protocol(format!(
                "identity aggregation needs exactly one party, got {p}"
            ))),
            _ => Ok(()),
        }
    }
}

/// Combines one round of party outputs into the cut-layer vector.
pub fn aggregate(ups: &[CutMessageUp], agg: Aggregator) -> Result<Vec<f64>> {
    agg.check(ups.len())?;
    let first = &ups[0];
    for up in ups {
        if up.indices != first.indices || up.values.len() != up.indices.len() {
            return Err(Error::Protocol(format!(
                "party {} covers different examples than party {}",
                up.party, first.party
            )));
        }
    }
    Ok(match agg {
        Aggregator::Identity => first.values.clone(),
        Aggregator::Average => {
            let p = ups.len() as f64;
            (0..first.values.len())
                .map(|i| ups.iter().map(|u| u.values[i]).sum::<f64>() / p)
                .collect()
        }
    })
}

/// Splits the cut-layer gradient into per-party messages by the chain rule
/// through the aggregator.
pub fn distribute_grad(
    indices: &[usize],
    grad: &[f64],
    agg: Aggregator,
    parties: usize,
) -> Result<Vec<CutMessageDown>> {
    agg.check(parties)?;
    if indices.len() != grad.len() {
        return Err(Error::Shape("gradient length differs from batch".into()));
    }
    if let Some(g) = grad.iter().find(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("cut gradient {g}")));
    }
    let scale = match agg {
        Aggregator::Identity => 1.0,
        Aggregator::Average => 1.0 / parties as f64,
    };
    Ok((0..parties)
        .map(|party| CutMessageDown {
            party,
            indices: indices.to_vec(),
            grad: grad.iter().map(|g| g * scale).collect(),
        })
        .collect())
}

/// Local model layout: LeakyReLU hidden layers, sigmoid scalar output.
pub fn local_model_layers(hidden: &[usize], slope: f64) -> Vec<(usize, Activation)> {
    hidden
        .iter()
        .map(|&w| (w, Activation::LeakyRelu { slope }))
        .chain(std::iter::once((1, Activation::Sigmoid)))
        .collect()
}

/// A feature-holding participant. Holds no labels.
#[derive(Debug, Clone)]
pub struct PassiveParty {
    pub id: usize,
    pub model: MlpParams<f64>,
    pub adam: AdamState<f64>,
    columns: Vec<usize>,
    /// Training rows restricted to `columns`.
    features: Matrix<f64>,
    pending: Option<(Vec<usize>, ForwardCache<f64>)>,
}

impl PassiveParty {
    /// Builds a party from the full training matrix, keeping only `columns`.
    pub fn new<R: Rng + ?Sized>(
        id: usize,
        train_features: &Matrix<f64>,
        columns: Vec<usize>,
        hidden: &[usize],
        leaky_slope: f64,
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        let all_rows: Vec<usize> = (0..train_features.rows()).collect();
        let features = train_features.select(&all_rows, &columns)?;
        let model = MlpParams::init(
            columns.len(),
            &local_model_layers(hidden, leaky_slope),
            init,
            rng,
        )?;
        Ok(Self::with_model(id, features, columns, model))
    }

    /// `features` must already be restricted to `columns`.
    pub fn with_model(
        id: usize,
        features: Matrix<f64>,
        columns: Vec<usize>,
        model: MlpParams<f64>,
    ) -> Self {
        let adam = AdamState::new(&model);
        Self {
            id,
            model,
            adam,
            columns,
            features,
            pending: None,
        }
    }

    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    pub fn num_examples(&self) -> usize {
        self.features.rows()
    }

    /// Runs the local model on a batch of training rows and remembers the
    /// activations for the matching gradient message.
    pub fn forward(&mut self, batch: &[usize]) -> Result<CutMessageUp> {
        let x = self.features.select_rows(batch)?;
        let (out, cache) = self.model.forward(&x)?;
        self.pending = Some((batch.to_vec(), cache));
        Ok(CutMessageUp {
            party: self.id,
            indices: batch.to_vec(),
            values: out.into_vec(),
        })
    }

    /// One Adam step on the local model, seeded by the received gradient.
    pub fn update(&mut self, down: &CutMessageDown, lr: f64) -> Result<()> {
        let (indices, cache) = self
            .pending
            .take()
            .ok_or_else(|| Error::Protocol(format!("party {} has no pending forward", self.id)))?;
        if down.indices != indices || down.party != self.id {
            return Err(Error::Protocol(format!(
                "party {} received gradients for a different batch",
                self.id
            )));
        }
        let upstream = Matrix::new(down.grad.len(), 1, down.grad.clone())?;
        let (grads, _) = self.model.backward(&cache, &upstream)?;
        self.adam.step(&mut self.model, &grads, lr)
    }

    /// Local outputs on every training row this party holds.
    pub fn output_all(&self) -> Result<Vec<f64>> {
        Ok(self.model.predict(&self.features)?.into_vec())
    }

    /// Local outputs on an arbitrary full-width feature matrix (e.g. a test split).
    pub fn output_on(&self, full_features: &Matrix<f64>) -> Result<Vec<f64>> {
        let all: Vec<usize> = (0..full_features.rows()).collect();
        let x = full_features.select(&all, &self.columns)?;
        Ok(self.model.predict(&x)?.into_vec())
    }
}

/// Message log: `epoch,batch,direction,party,index,value`.
#[derive(Debug, Clone, Default)]
pub struct RoundTrace {
    lines: Vec<String>,
}

impl RoundTrace {
    pub const HEADER: &'static str = "epoch,batch,direction,party,index,value";

    fn log(&mut self, epoch: usize, batch: usize, dir: &str, party: usize, idx: &[usize], v: &[f64]) {
        for (i, x) in idx.iter().zip(v) {
            self.lines.push(format!("{epoch},{batch},{dir},{party},{i},{x}"));
        }
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for l in &self.lines {
            let _ = writeln!(s, "{l}");
        }
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Synchronous round orchestration across all passive parties.
#[derive(Debug, Clone)]
pub struct Federation {
    pub parties: Vec<PassiveParty>,
    pub aggregator: Aggregator,
    pub trace: Option<RoundTrace>,
    open_round: Option<Vec<usize>>,
}

impl Federation {
    pub fn new(parties: Vec<PassiveParty>, aggregator: Aggregator) -> Result<Self> {
        aggregator.check(parties.len())?;
        let n = parties[0].num_examples();
        if parties.iter().any(|p| p.num_examples() != n) {
            return Err(Error::Protocol("parties hold different example counts".into()));
        }
        Ok(Self {
            parties,
            aggregator,
            trace: None,
            open_round: None,
        })
    }

    pub fn num_examples(&self) -> usize {
        self.parties[0].num_examples()
    }

    /// Every party sends its batch outputs; returns the aggregated cut layer.
    pub fn forward_round(&mut self, epoch: usize, batch: usize, indices: &[usize]) -> Result<Vec<f64>> {
        if self.open_round.is_some() {
            return Err(Error::Protocol("previous round was never answered".into()));
        }
        let ups = self
            .parties
            .iter_mut()
            .map(|p| p.forward(indices))
            .collect::<Result<Vec<_>>>()?;
        if let Some(t) = self.trace.as_mut() {
            for up in &ups {
                t.log(epoch, batch, "up", up.party, &up.indices, &up.values);
            }
        }
        let y = aggregate(&ups, self.aggregator)?;
        self.open_round = Some(indices.to_vec());
        Ok(y)
    }

    /// Answers the open round with the cut-layer gradient; every party updates.
    pub fn backward_round(&mut self, epoch: usize, batch: usize, grad: &[f64], lr: f64) -> Result<()> {
        let indices = self
            .open_round
            .take()
            .ok_or_else(|| Error::Protocol("gradient sent without an open round".into()))?;
        let downs = distribute_grad(&indices, grad, self.aggregator, self.parties.len())?;
        if let Some(t) = self.trace.as_mut() {
            for d in &downs {
                t.log(epoch, batch, "down", d.party, &d.indices, &d.grad);
            }
        }
        for (party, down) in self.parties.iter_mut().zip(&downs) {
            party.update(down, lr)?;
        }
        Ok(())
    }

    /// Aggregated cut-layer values over the whole training set.
    pub fn train_cut_values(&self) -> Result<Vec<f64>> {
        let ups = self
            .parties
            .iter()
            .map(|p| {
                Ok(CutMessageUp {
                    party: p.id,
                    indices: (0..p.num_examples()).collect(),
                    values: p.output_all()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        aggregate(&ups, self.aggregator)
    }

    /// Aggregated cut-layer values for a full-width feature matrix.
    pub fn cut_values(&self, full_features: &Matrix<f64>) -> Result<Vec<f64>> {
        let ups = self
            .parties
            .iter()
            .map(|p| {
                Ok(CutMessageUp {
                    party: p.id,
                    indices: (0..full_features.rows()).collect(),
                    values: p.output_on(full_features)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        aggregate(&ups, self.aggregator)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::Layer;

    fn up(party: usize, values: Vec<f64>) -> CutMessageUp {
        CutMessageUp {
            party,
            indices: (0..values.len()).collect(),
            values,
        }
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(
            aggregate(&[up(0, vec![0.2, 0.9])], Aggregator::Identity).unwrap(),
            vec![0.2, 0.9]
        );
        let avg = aggregate(
            &[up(0, vec![0.3]), up(1, vec![0.6]), up(2, vec![0.9])],
            Aggregator::Average,
        )
        .unwrap();
        assert!((avg[0] - 0.6).abs() < 1e-15);
        assert!(aggregate(&[up(0, vec![0.3]), up(1, vec![0.6])], Aggregator::Identity).is_err());
        let mut shifted = up(1, vec![0.5]);
        shifted.indices = vec![4];
        assert!(matches!(
            aggregate(&[up(0, vec![0.3]), shifted], Aggregator::Average),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn distribute_examples() {
        let d = distribute_grad(&[0, 1], &[1.0, -2.0], Aggregator::Identity, 1).unwrap();
        assert_eq!(d[0].grad, vec![1.0, -2.0]);
        let d = distribute_grad(&[5], &[0.9], Aggregator::Average, 3).unwrap();
        assert_eq!(d.len(), 3);
        for m in &d {
            assert!((m.grad[0] - 0.3).abs() < 1e-15);
        }
    }

    fn zero_party(id: usize, features: Matrix<f64>, columns: Vec<usize>) -> PassiveParty {
        let model = MlpParams::new(vec![Layer::new(
            Matrix::zeros(1, columns.len()),
            vec![0.0],
            Activation::Sigmoid,
        )
        .unwrap()])
        .unwrap();
        PassiveParty::with_model(id, features, columns, model)
    }

    #[test]
    fn zero_model_emits_one_half_and_ignores_zero_gradient() {
        let x = Matrix::from_fn(4, 2, |i, j| (i + j) as f64);
        let mut p = zero_party(0, x, vec![0, 1]);
        let msg = p.forward(&[0, 2, 3]).unwrap();
        assert_eq!(msg.values, vec![0.5; 3]);
        let before = p.model.clone();
        p.update(
            &CutMessageDown {
                party: 0,
                indices: vec![0, 2, 3],
                grad: vec![0.0; 3],
            },
            1e-4,
        )
        .unwrap();
        assert_eq!(p.model, before);
        assert!(p.forward(&[9]).is_err());
    }

    #[test]
    fn update_requires_matching_forward() {
        let x = Matrix::from_fn(3, 1, |i, _| i as f64);
        let mut p = zero_party(0, x, vec![0]);
        let down = CutMessageDown {
            party: 0,
            indices: vec![0],
            grad: vec![1.0],
        };
        assert!(matches!(p.update(&down, 1e-4), Err(Error::Protocol(_))));
        p.forward(&[1]).unwrap();
        assert!(matches!(p.update(&down, 1e-4), Err(Error::Protocol(_))));
    }

    #[test]
    fn parties_only_see_their_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Matrix::from_fn(5, 4, |i, j| (10 * i + j) as f64);
        let a = PassiveParty::new(0, &x, vec![0, 1], &[3], 0.01, Init::FanIn, &mut rng).unwrap();
        let b = PassiveParty::new(1, &x, vec![2, 3], &[3], 0.01, Init::FanIn, &mut rng).unwrap();
        assert_eq!(a.features.cols(), 2);
        assert_eq!(a.features.row(2), &[20.0, 21.0]);
        assert_eq!(b.features.row(2), &[22.0, 23.0]);
        assert_eq!(a.model.input_dim(), 2);
    }

    #[test]
    fn rounds_must_alternate() {
        let x = Matrix::from_fn(4, 2, |i, j| (i * j) as f64);
        let parties = vec![zero_party(0, x, vec![0, 1])];
        let mut fed = Federation::new(parties, Aggregator::Identity).unwrap();
        fed.trace = Some(RoundTrace::default());
        assert!(fed.backward_round(0, 0, &[0.1], 1e-3).is_err());
        fed.forward_round(0, 0, &[1, 2]).unwrap();
        assert!(fed.forward_round(0, 1, &[3]).is_err());
        fed.backward_round(0, 0, &[0.1, -0.1], 1e-3).unwrap();
        let trace = fed.trace.as_ref().unwrap();
        assert_eq!(trace.lines().len(), 4);
        assert_eq!(trace.lines()[2], "0,0,down,0,1,0.1");
        assert!(trace.to_csv().starts_with(RoundTrace::HEADER));
    }

    #[test]
    fn messages_toward_parties_carry_no_labels() {
        let msg = CutMessageDown {
            party: 0,
            indices: vec![3],
            grad: vec![0.1],
        };
        let json = serde_json::to_value(&msg).unwrap();
        let keys: Vec<&String> = json.as_object().unwrap().keys().collect();
        assert_eq!(keys, vec!["grad", "indices", "party"]);
    }
}
