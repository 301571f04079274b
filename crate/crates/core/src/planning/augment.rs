use rand::Rng;
use rayon::prelude::*;

use crate::data::TransitionDataset;
use crate::dynamics::TransitionModel;
use crate::envs::Policy;
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::rng::{self, Stream};

const AUGMENT_BLOCK: usize = 256;

/// Original transitions followed by synthetic ones.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedDataset {
    pub data: TransitionDataset,
    /// `true` for model-generated transitions.
    pub synthetic: Vec<bool>,
}

impl AugmentedDataset {
    pub fn synthetic_count(&self) -> usize {
        self.synthetic.iter().filter(|s| **s).count()
    }
}

/// `⌈ratio · len⌉`, with a small guard so that products that are integral in
/// exact arithmetic are not pushed up by rounding.
pub fn augmentation_count(len: usize, ratio: f64) -> Result<usize> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::Config(format!("augmentation ratio {ratio} must be positive")));
    }
    Ok((ratio * len as f64 - 1e-9).ceil().max(0.0) as usize)
}

/// Appends `⌈ratio · N⌉` model transitions `(s, â, r̂, ŝ')`, with `s` drawn
/// uniformly from the dataset's states and `â ~ π(·|s)`. Synthetic row `i`
/// draws only from stream `i` of `seed`.
pub fn augment_dataset(
    dataset: &TransitionDataset,
    policy: &dyn Policy,
    model: &dyn TransitionModel,
    ratio: f64,
    seed: u64,
) -> Result<AugmentedDataset> {
    let count = augmentation_count(dataset.len(), ratio)?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput("cannot augment an empty dataset".into()));
    }
    let (n, m) = (dataset.state_dim(), dataset.action_dim());
    if model.state_dim() != n || model.action_dim() != m || policy.state_dim() != n || policy.action_dim() != m {
        return Err(Error::InputShape("dataset, policy and model dimensions differ".into()));
    }
    let ids: Vec<usize> = (0..count).collect();
    let blocks: Vec<TransitionDataset> = ids
        .par_chunks(AUGMENT_BLOCK)
        .map(|block| {
            let mut streams: Vec<Stream> = block.iter().map(|&i| rng::stream(seed, i as u64)).collect();
            let mut states = Matrix::zeros(block.len(), n);
            let mut actions = Matrix::zeros(block.len(), m);
            for (r, rng) in streams.iter_mut().enumerate() {
                let s = dataset.state(rng.random_range(0..dataset.len()));
                states.row_mut(r).copy_from_slice(s);
                let a = policy.sample(s, rng);
                actions.row_mut(r).copy_from_slice(&a);
            }
            let (next, rewards) = model.sample_batch(&states, &actions, &mut streams)?;
            let mut out = TransitionDataset::with_capacity(n, m, block.len());
            for r in 0..block.len() {
                out.push(states.row(r), actions.row(r), rewards[r], next.row(r))?;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut data = dataset.clone();
    for b in &blocks {
        data.extend_from(b)?;
    }
    let mut synthetic = vec![false; dataset.len()];
    synthetic.resize(dataset.len() + count, true);
    Ok(AugmentedDataset { data, synthetic })
}

#[cfg(test)]
mod tests {
    use nalgebra::{DMatrix, DVector};

    use super::*;
    use crate::envs::{collect_dataset, GaussianLinearPolicy, LinearGaussianEnv, TrueDynamics};

    fn setup(count: usize) -> (LinearGaussianEnv, GaussianLinearPolicy, TransitionDataset) {
        let env = LinearGaussianEnv::random_stable(2, 1, 25, 3).unwrap();
        let pol = GaussianLinearPolicy::new(
            DMatrix::from_row_slice(1, 2, &[-0.2, 0.1]),
            DVector::zeros(1),
            DVector::from_element(1, 0.4),
        )
        .unwrap();
        let (data, _) = collect_dataset(&env, &pol, count, 1).unwrap();
        (env, pol, data)
    }

    #[test]
    fn counts() {
        assert_eq!(augmentation_count(10, 0.5).unwrap(), 5);
        assert_eq!(augmentation_count(10, 1.0).unwrap(), 10);
        assert_eq!(augmentation_count(10, 0.33).unwrap(), 4);
        assert_eq!(augmentation_count(3, 0.1).unwrap(), 1);
        assert!(matches!(augmentation_count(10, 0.0), Err(Error::Config(_))));
        assert!(augmentation_count(10, -1.0).is_err());
    }

    #[test]
    fn one_to_one_ratio_doubles_the_data() {
        let (env, pol, data) = setup(300);
        let out = augment_dataset(&data, &pol, &TrueDynamics(&env), 1.0, 2).unwrap();
        assert_eq!(out.data.len(), 600);
        assert_eq!(out.synthetic_count(), 300);
        assert!(out.synthetic[..300].iter().all(|s| !s));
        assert_eq!(out.data.subset(&(0..300).collect::<Vec<_>>()), data);
        let again = augment_dataset(&data, &pol, &TrueDynamics(&env), 1.0, 2).unwrap();
        assert_eq!(again, out);
    }
}
