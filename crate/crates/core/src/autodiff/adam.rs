use super::store::{ParamId, ParamStore};
use super::{shape_err, AutodiffError, Real, Tensor};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Bias-corrected Adam.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub step: u64,
    m: Vec<Vec<Real>>,
    v: Vec<Vec<Real>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = |id: ParamId| if store.is_trainable(id) { vec![0.0; store.get(id).numel()] } else { Vec::new() };
        Self { lr, step: 0, m: store.ids().map(zeros).collect(), v: store.ids().map(zeros).collect() }
    }

    /// Applies one update. Parameters without a gradient are left alone but
    /// still see the shared step counter advance.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)]) -> Result<(), AutodiffError> {
        for (id, g) in grads {
            if !store.is_trainable(*id) {
                continue;
            }
            if store.get(*id).shape != g.shape {
                return Err(shape_err("adam", format!("{}: {:?} vs {:?}", store.name(*id), store.get(*id).shape, g.shape)));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for (id, g) in grads {
            if !store.is_trainable(*id) {
                continue;
            }
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let w = &mut store.get_mut(*id).data;
            for i in 0..w.len() {
                let gi = g.data[i] as f64;
                let mi = BETA1 * m[i] as f64 + (1.0 - BETA1) * gi;
                let vi = BETA2 * v[i] as f64 + (1.0 - BETA2) * gi * gi;
                m[i] = mi as Real;
                v[i] = vi as Real;
                let step = self.lr * (mi / c1) / ((vi / c2).sqrt() + EPS);
                w[i] = (w[i] as f64 - step) as Real;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamKind;

    fn one(value: Real) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.insert("w", ParamKind::Trainable, Tensor::scalar(value));
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut s, id) = one(0.7);
        let mut adam = AdamState::new(&s, 0.1);
        adam.update(&mut s, &[(id, Tensor::scalar(0.0))]).unwrap();
        assert_eq!(s.get(id).item(), 0.7);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0, -0.02] {
            let (mut s, id) = one(1.0);
            let mut adam = AdamState::new(&s, 0.01);
            adam.update(&mut s, &[(id, Tensor::scalar(g))]).unwrap();
            let moved = s.get(id).item() as f64 - 1.0;
            assert!((moved + 0.01 * (g as f64).signum()).abs() < 1e-6, "{moved}");
        }
    }

    #[test]
    fn three_steps_on_square_match_reference() {
        let (mut s, id) = one(1.0);
        let mut adam = AdamState::new(&s, 0.1);
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=3 {
            let g = 2.0 * s.get(id).item() as f64;
            adam.update(&mut s, &[(id, Tensor::scalar(g as Real))]).unwrap();
            let gr = 2.0 * w;
            m = 0.9 * m + 0.1 * gr;
            v = 0.999 * v + 0.001 * gr * gr;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((s.get(id).item() as f64 - w).abs() < 1e-6, "{} vs {w}", s.get(id).item());
    }

    #[test]
    fn mismatched_gradient_is_error() {
        let (mut s, id) = one(1.0);
        let mut adam = AdamState::new(&s, 0.1);
        assert!(adam.update(&mut s, &[(id, Tensor::zeros(&[2]))]).is_err());
        assert_eq!(adam.step, 0);
    }
}
