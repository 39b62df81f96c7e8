use ndarray::{Array2, ArrayView1};
use rand::Rng;

use crate::error::{Error, Result};

/// Binary input events, one row per time-step.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTrain {
    events: Array2<u8>,
    /// Spiking input indices per step, ascending.
    active: Vec<Vec<u32>>,
}

impl SpikeTrain {
    pub fn from_events(events: Array2<u8>) -> Result<Self> {
        if events.nrows() == 0 {
            return Err(Error::param("t_steps", "must be at least 1"));
        }
        if let Some(v) = events.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidInput(format!("spike entry {v} is not binary")));
        }
        let active = events
            .rows()
            .into_iter()
            .map(|r| r.iter().enumerate().filter(|(_, &s)| s == 1).map(|(i, _)| i as u32).collect())
            .collect();
        Ok(Self { events, active })
    }

    pub fn t_steps(&self) -> usize {
        self.events.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.events.ncols()
    }

    pub fn events(&self) -> &Array2<u8> {
        &self.events
    }

    pub fn step(&self, t: usize) -> ArrayView1<'_, u8> {
        self.events.row(t)
    }

    pub fn active(&self, t: usize) -> &[u32] {
        &self.active[t]
    }

    pub fn total_spikes(&self) -> usize {
        self.active.iter().map(Vec::len).sum()
    }

    /// Mean rate per input over the train.
    pub fn rates(&self) -> Vec<f64> {
        let mut r = vec![0.0; self.inputs()];
        for a in &self.active {
            for &i in a {
                r[i as usize] += 1.0;
            }
        }
        let t = self.t_steps() as f64;
        r.iter_mut().for_each(|v| *v /= t);
        r
    }
}

/// Bernoulli spikes with per-step probability `intensity / 255 · rate_scale`.
///
/// Inputs with probability 0 or 1 consume no draws. The others draw once per
/// step, step-major.
pub fn poisson_encode<R: Rng + ?Sized>(
    intensities: &[f64],
    t_steps: usize,
    rate_scale: f64,
    rng: &mut R,
) -> Result<SpikeTrain> {
    if t_steps == 0 {
        return Err(Error::param("t_steps", "must be at least 1"));
    }
    if !(rate_scale.is_finite() && (0.0..=1.0).contains(&rate_scale)) {
        return Err(Error::param("rate_scale", format!("{rate_scale} outside [0, 1]")));
    }
    if let Some(bad) = intensities.iter().find(|v| !(0.0..=255.0).contains(*v)) {
        return Err(Error::InvalidInput(format!("intensity {bad} outside [0, 255]")));
    }
    let probs: Vec<f64> = intensities.iter().map(|v| v / 255.0 * rate_scale).collect();
    let mut events = Array2::zeros((t_steps, intensities.len()));
    let mut active = Vec::with_capacity(t_steps);
    for t in 0..t_steps {
        let mut row_active = Vec::new();
        for (i, &p) in probs.iter().enumerate() {
            let spike = if p <= 0.0 {
                false
            } else if p >= 1.0 {
                true
            } else {
                rng.gen::<f64>() < p
            };
            if spike {
                events[[t, i]] = 1;
                row_active.push(i as u32);
            }
        }
        active.push(row_active);
    }
    Ok(SpikeTrain { events, active })
}

pub fn poisson_encode_image<R: Rng + ?Sized>(image: &[u8], t_steps: usize, rate_scale: f64, rng: &mut R) -> Result<SpikeTrain> {
    let v: Vec<f64> = image.iter().map(|&p| p as f64).collect();
    poisson_encode(&v, t_steps, rate_scale, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;

    #[test]
    fn zero_image_never_spikes() {
        let t = poisson_encode_image(&[0; 784], 50, 1.0, &mut seed::stream(1)).unwrap();
        assert_eq!(t.total_spikes(), 0);
        assert_eq!(t.t_steps(), 50);
    }

    #[test]
    fn saturated_pixel_spikes_every_step() {
        for s in 0..100 {
            let t = poisson_encode_image(&[255, 0, 255], 50, 1.0, &mut seed::stream(s)).unwrap();
            assert_eq!(t.rates(), vec![1.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn mid_intensity_mean_count() {
        let p: f64 = 128.0 / 255.0;
        let trials = 10_000;
        let mut rng = seed::stream(7);
        let mut total = 0usize;
        for _ in 0..trials {
            total += poisson_encode(&[128.0], 50, 1.0, &mut rng).unwrap().total_spikes();
        }
        let mean = total as f64 / trials as f64;
        let sd_mean = (50.0 * p * (1.0 - p) / trials as f64).sqrt();
        assert!((mean - 50.0 * p).abs() <= 3.0 * sd_mean, "mean {mean}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut rng = seed::stream(0);
        assert!(poisson_encode(&[256.0], 5, 1.0, &mut rng).is_err());
        assert!(poisson_encode(&[-1.0], 5, 1.0, &mut rng).is_err());
        assert!(poisson_encode(&[f64::NAN], 5, 1.0, &mut rng).is_err());
        assert!(poisson_encode(&[1.0], 0, 1.0, &mut rng).is_err());
        assert!(poisson_encode(&[1.0], 5, 1.5, &mut rng).is_err());
        assert!(SpikeTrain::from_events(Array2::from_elem((2, 2), 2)).is_err());
    }

    proptest! {
        #[test]
        fn events_are_binary_and_index_lists_agree(seed_value in any::<u64>(), px in proptest::collection::vec(0u8..=255, 1..40)) {
            let t = poisson_encode_image(&px, 7, 0.8, &mut seed::stream(seed_value)).unwrap();
            let rebuilt = SpikeTrain::from_events(t.events().clone()).unwrap();
            prop_assert_eq!(&rebuilt, &t);
            let again = poisson_encode_image(&px, 7, 0.8, &mut seed::stream(seed_value)).unwrap();
            prop_assert_eq!(again, t);
        }
    }
}
