//! Pluggable strategies for picking which scored variants feed the next
//! curation round.

use rand_pcg::Pcg64;

use crate::curation::EdgenessRecord;

/// A way of choosing `k` pool entries. Implementations must be
/// deterministic given the generator state and must return `k` distinct
/// indices into the pool.
pub trait SelectionStrategy {
    fn name(&self) -> &'static str;
    fn select(&self, pool: &[EdgenessRecord], k: usize, rng: &mut Pcg64) -> Vec<usize>;
}

/// Takes the k highest-loss entries; ties keep the earlier pool index. This
/// is the curation loop's own policy: hard samples first.
pub struct MaxLossSelection;

impl SelectionStrategy for MaxLossSelection {
    fn name(&self) -> &'static str {
        "max_loss"
    }

    fn select(&self, pool: &[EdgenessRecord], k: usize, _rng: &mut Pcg64) -> Vec<usize> {
        let mut indices: Vec<usize> = (0..pool.len()).collect();
        indices.sort_by(|a, b| {
            pool[*b]
                .loss
                .partial_cmp(&pool[*a].loss)
                .expect("finite losses")
                .then(a.cmp(b))
        });
        indices.truncate(k);
        indices
    }
}

/// Uniform sample of k distinct indices (partial Fisher-Yates); the control
/// arm the loop is compared against.
pub struct RandomSelection;

impl SelectionStrategy for RandomSelection {
    fn name(&self) -> &'static str {
        "random"
    }

    fn select(&self, pool: &[EdgenessRecord], k: usize, rng: &mut Pcg64) -> Vec<usize> {
        use rand::RngExt;
        let mut indices: Vec<usize> = (0..pool.len()).collect();
        for i in 0..k.min(pool.len()) {
            let j = rng.random_range(i..indices.len());
            indices.swap(i, j);
        }
        indices.truncate(k);
        indices
    }
}

/// Looks a strategy up by its CLI name.
pub fn selection_by_name(name: &str) -> Option<Box<dyn SelectionStrategy>> {
    match name {
        "max_loss" => Some(Box::new(MaxLossSelection)),
        "random" => Some(Box::new(RandomSelection)),
        _ => None,
    }
}

/// Names accepted by [`selection_by_name`], in display order.
pub fn selection_names() -> Vec<&'static str> {
    vec!["max_loss", "random"]
}
