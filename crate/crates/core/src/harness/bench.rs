use std::ops::Range;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::HarnessError;

pub const BATCH_SIZES: [usize; 4] = [8, 16, 32, 64];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub method: String,
    pub batch_size: usize,
    /// Transforms inside the timed section.
    pub transforms: usize,
    pub ms_per_transform: f64,
    pub threads: usize,
}

/// Times `run` over consecutive batches of `0..items` for each batch size.
///
/// The first batch of each size is run once untimed as warm-up. Only whole
/// batches are timed unless the set is smaller than one batch. The reported
/// figure is total batch time divided by the number of transforms.
pub fn bench<F>(method: &str, items: usize, batch_sizes: &[usize], mut run: F) -> Result<Vec<TimingRow>, HarnessError>
where
    F: FnMut(Range<usize>) -> Result<(), HarnessError>,
{
    if items == 0 {
        return Err(HarnessError::EmptyDataset);
    }
    let mut rows = Vec::new();
    for &bs in batch_sizes {
        if bs == 0 {
            return Err(HarnessError::Config("batch size 0".into()));
        }
        let full = items / bs;
        let batches: Vec<Range<usize>> =
            if full == 0 { std::iter::once(0..items).collect() } else { (0..full).map(|b| b * bs..(b + 1) * bs).collect() };
        run(batches[0].clone())?;
        let mut elapsed = 0.0;
        let mut transforms = 0;
        for b in batches {
            transforms += b.len();
            let t0 = Instant::now();
            run(b)?;
            elapsed += t0.elapsed().as_secs_f64();
        }
        rows.push(TimingRow {
            method: method.to_string(),
            batch_size: bs,
            transforms,
            ms_per_transform: 1e3 * elapsed / transforms as f64,
            threads: rayon::current_num_threads(),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    #[test]
    fn sleeping_stub_reports_its_rate() {
        let rows = bench("stub", 64, &BATCH_SIZES, |r| {
            std::thread::sleep(Duration::from_millis(r.len() as u64));
            Ok(())
        })
        .unwrap();
        assert_eq!(rows.iter().map(|r| r.batch_size).collect::<Vec<_>>(), BATCH_SIZES);
        for r in &rows {
            assert_eq!(r.transforms, 64);
            assert!(r.ms_per_transform >= 1.0 && r.ms_per_transform < 1.5, "{r:?}");
        }
    }

    #[test]
    fn small_sets_time_one_partial_batch() {
        let mut calls = Vec::new();
        let rows = bench("stub", 5, &[8], |r| {
            calls.push(r);
            Ok(())
        })
        .unwrap();
        assert_eq!(calls, vec![0..5, 0..5]);
        assert_eq!(rows[0].transforms, 5);
        assert!(bench("stub", 0, &[8], |_| Ok(())).is_err());
    }
}
