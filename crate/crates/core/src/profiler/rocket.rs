//! Random convolutional kernel transform with PPV pooling.
//!
//! The 84 kernels are every placement of three weight-2 taps among nine,
//! the rest weighing -1. Each (dilation, kernel) combination convolves the
//! sum of a random channel subset and reports, for each of its biases, the
//! proportion of outputs above the bias.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Window;
use crate::likelihood::quantile_sorted;

pub const KERNEL_LEN: usize = 9;
pub const N_KERNELS: usize = 84;

/// Positions of the weight-2 taps, in lexicographic order.
pub fn kernel_indices() -> Vec<[usize; 3]> {
    let mut out = Vec::with_capacity(N_KERNELS);
    for a in 0..KERNEL_LEN {
        for b in a + 1..KERNEL_LEN {
            for c in b + 1..KERNEL_LEN {
                out.push([a, b, c]);
            }
        }
    }
    out
}

/// Full weight vector of kernel `k`.
pub fn kernel_weights(k: usize) -> [f64; KERNEL_LEN] {
    let mut w = [-1.0; KERNEL_LEN];
    for i in kernel_indices()[k] {
        w[i] = 2.0;
    }
    w
}

#[derive(Debug, Clone, PartialEq)]
pub struct Combination {
    pub kernel: usize,
    pub dilation: usize,
    /// Edge-replicated padding keeps the output as long as the input;
    /// otherwise only fully overlapping positions are used.
    pub padded: bool,
    pub channels: Vec<usize>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelBank {
    pub seed: u64,
    pub n_channels: usize,
    pub window_len: usize,
    pub combinations: Vec<Combination>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RocketError {
    Config(String),
}

impl std::fmt::Display for RocketError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RocketError::Config(m) => write!(f, "invalid kernel bank: {m}"),
        }
    }
}

impl std::error::Error for RocketError {}

/// Powers of two whose receptive field fits in the window.
pub fn dilations(window_len: usize) -> Vec<usize> {
    let mut out = vec![1];
    while out[out.len() - 1] * 2 * (KERNEL_LEN - 1) < window_len {
        out.push(out[out.len() - 1] * 2);
    }
    out
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Builds the kernel bank: combination layout, channel subsets and bias
/// quantile levels. Biases are zero until [`KernelBank::fit_biases`] runs.
///
/// The feature count is rounded down to a multiple of 84 and spread evenly
/// over the dilations, extra features going to the smaller dilations.
pub fn build_kernel_bank(seed: u64, q: usize, window_len: usize, n_features: usize) -> Result<KernelBank, RocketError> {
    if q == 0 {
        return Err(RocketError::Config("need at least one channel".into()));
    }
    if window_len < KERNEL_LEN {
        return Err(RocketError::Config(format!("window length {window_len} shorter than a kernel")));
    }
    let per_kernel = n_features / N_KERNELS;
    if per_kernel == 0 {
        return Err(RocketError::Config(format!("need at least {N_KERNELS} features, got {n_features}")));
    }
    let dils = dilations(window_len);
    let n_dil = dils.len().min(per_kernel);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_exp = ((q.min(KERNEL_LEN) + 1) as f64).log2();
    let mut combinations = Vec::with_capacity(n_dil * N_KERNELS);
    for (di, &dilation) in dils.iter().take(n_dil).enumerate() {
        let count = per_kernel / n_dil + usize::from(di < per_kernel % n_dil);
        for kernel in 0..N_KERNELS {
            let n_ch = (2f64.powf(rng.random_range(0.0..max_exp)).floor() as usize).clamp(1, q);
            let mut channels = sample(&mut rng, q, n_ch).into_vec();
            channels.sort_unstable();
            combinations.push(Combination {
                kernel,
                dilation,
                padded: combinations.len() % 2 == 0,
                channels,
                biases: vec![0.0; count],
            });
        }
    }
    Ok(KernelBank { seed, n_channels: q, window_len, combinations })
}

impl KernelBank {
    pub fn n_features(&self) -> usize {
        self.combinations.iter().map(|c| c.biases.len()).sum()
    }

    /// Quantile levels in feature order, `(i + 1) * phi mod 1`.
    pub fn quantile_levels(&self) -> Vec<f64> {
        (1..=self.n_features()).map(|i| (i as f64 * GOLDEN).fract()).collect()
    }

    /// Sets each combination's biases to quantiles of its convolution output
    /// on one randomly drawn training window.
    pub fn fit_biases(&mut self, training: &[&Window]) -> Result<(), RocketError> {
        if training.is_empty() {
            return Err(RocketError::Config("no windows to fit biases on".into()));
        }
        self.check_windows(training.iter().copied())?;
        let levels = self.quantile_levels();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_b1a5);
        let mut f = 0;
        for c in &mut self.combinations {
            let w = training[rng.random_range(0..training.len())];
            let mut out = convolve(w, c);
            out.sort_by(f64::total_cmp);
            for b in &mut c.biases {
                *b = quantile_sorted(&out, levels[f]);
                f += 1;
            }
        }
        Ok(())
    }

    /// Replaces all biases, in feature order.
    pub fn with_biases(mut self, biases: &[f64]) -> Result<Self, RocketError> {
        if biases.len() != self.n_features() {
            return Err(RocketError::Config(format!("expected {} biases, got {}", self.n_features(), biases.len())));
        }
        let mut it = biases.iter();
        for c in &mut self.combinations {
            c.biases.iter_mut().for_each(|b| *b = *it.next().expect("length checked"));
        }
        Ok(self)
    }

    fn check_windows<'a>(&self, ws: impl IntoIterator<Item = &'a Window>) -> Result<(), RocketError> {
        for w in ws {
            if w.n_channels() != self.n_channels || w.len() != self.window_len {
                return Err(RocketError::Config(format!(
                    "window is {}x{}, bank expects {}x{}",
                    w.n_channels(),
                    w.len(),
                    self.n_channels,
                    self.window_len
                )));
            }
        }
        Ok(())
    }

    /// PPV features of one window, each in [0, 1].
    pub fn transform(&self, w: &Window) -> Result<Vec<f64>, RocketError> {
        self.check_windows([w])?;
        let mut features = Vec::with_capacity(self.n_features());
        for c in &self.combinations {
            let out = convolve(w, c);
            let n = out.len() as f64;
            for &b in &c.biases {
                features.push(out.iter().filter(|&&o| o > b).count() as f64 / n);
            }
        }
        Ok(features)
    }

    pub fn transform_all(&self, ws: &[Window]) -> Result<Vec<Vec<f64>>, RocketError> {
        ws.iter().map(|w| self.transform(w)).collect()
    }
}

/// Convolution output of one combination, using `w . x = 3 * (taps of 2) -
/// (all taps)` since the weights are -1 + 3 * [tap is 2].
fn convolve(w: &Window, c: &Combination) -> Vec<f64> {
    let len = w.len();
    let mut sum = vec![0.0; len];
    for &ch in &c.channels {
        for (s, x) in sum.iter_mut().zip(w.row(ch)) {
            *s += x;
        }
    }
    let d = c.dilation;
    let span = (KERNEL_LEN - 1) * d;
    let taps = kernel_indices()[c.kernel];
    if c.padded {
        let half = span / 2;
        let at = |i: isize| sum[i.clamp(0, len as isize - 1) as usize];
        (0..len as isize)
            .map(|t| {
                let start = t - half as isize;
                let all: f64 = (0..KERNEL_LEN).map(|j| at(start + (j * d) as isize)).sum();
                let twos: f64 = taps.iter().map(|&j| at(start + (j * d) as isize)).sum();
                3.0 * twos - all
            })
            .collect()
    } else if span >= len {
        vec![0.0]
    } else {
        (0..len - span)
            .map(|t| {
                let all: f64 = (0..KERNEL_LEN).map(|j| sum[t + j * d]).sum();
                let twos: f64 = taps.iter().map(|&j| sum[t + j * d]).sum();
                3.0 * twos - all
            })
            .collect()
    }
}
