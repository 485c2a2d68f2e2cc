//! Python bindings: the latent types, truncation, pattern statistics,
//! quantization grids, model training and IO, information diagnostics,
//! essence bounds, and the full pipeline.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use std::collections::BTreeMap;
use std::path::Path;

use spectrum_mdl::error::Error;
use spectrum_mdl::essence;
use spectrum_mdl::info_metrics;
use spectrum_mdl::io;
use spectrum_mdl::model::{self, Codec, Decoder};
use spectrum_mdl::pattern_stats;
use spectrum_mdl::pipeline;
use spectrum_mdl::robustness;
use spectrum_mdl::spectrum;
use spectrum_mdl::support::BoundedSupport;

fn err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Spiking threshold `a`, bound `b`, and latent width `k`.
#[pyclass(name = "SpectrumParams", frozen, from_py_object)]
#[derive(Clone)]
struct PySpectrumParams {
    inner: spectrum::SpectrumParams,
}

#[pymethods]
impl PySpectrumParams {
    #[new]
    fn new(a: f64, b: f64, k: usize) -> PyResult<Self> {
        Ok(Self {
            inner: spectrum::SpectrumParams::new(a, b, k).map_err(err)?,
        })
    }

    #[getter]
    fn a(&self) -> f64 {
        self.inner.a
    }

    #[getter]
    fn b(&self) -> f64 {
        self.inner.b
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    fn __repr__(&self) -> String {
        format!(
            "SpectrumParams(a={}, b={}, k={})",
            self.inner.a, self.inner.b, self.inner.k
        )
    }
}

/// A latent code: entries are exactly 0 or in `[a, b]`.
#[pyclass(name = "Spectrum", frozen, from_py_object)]
#[derive(Clone)]
struct PySpectrum {
    inner: spectrum::Spectrum,
}

#[pymethods]
impl PySpectrum {
    #[new]
    fn new(values: Vec<f64>, params: &PySpectrumParams) -> PyResult<Self> {
        Ok(Self {
            inner: spectrum::Spectrum::new(values, &params.inner).map_err(err)?,
        })
    }

    fn values(&self) -> Vec<f64> {
        self.inner.values().to_vec()
    }

    fn pattern(&self) -> Vec<usize> {
        self.inner.pattern().dims().to_vec()
    }

    fn is_dormant(&self) -> bool {
        self.inner.is_dormant()
    }

    fn __repr__(&self) -> String {
        format!("Spectrum({:?})", self.inner.values())
    }
}

/// Componentwise truncation into `{0} u [a, b]`.
#[pyfunction]
fn truncate(values: Vec<f64>, params: &PySpectrumParams) -> PyResult<PySpectrum> {
    Ok(PySpectrum {
        inner: spectrum::truncate(&values, &params.inner).map_err(err)?,
    })
}

/// Pattern census: distinct spiking patterns with their counts.
#[pyclass(name = "PatternCensus", frozen, from_py_object)]
#[derive(Clone)]
struct PyPatternCensus {
    inner: pattern_stats::PatternCensus,
}

#[pymethods]
impl PyPatternCensus {
    /// Builds a census from `(dims, count)` pairs.
    #[staticmethod]
    fn from_counts(entries: Vec<(Vec<usize>, u64)>) -> PyResult<Self> {
        let mut counts = BTreeMap::new();
        for (dims, count) in entries {
            let pattern = spectrum::SpikingPattern::new(dims, usize::MAX).map_err(err)?;
            counts.insert(pattern, count);
        }
        Ok(Self {
            inner: pattern_stats::PatternCensus::from_counts(counts).map_err(err)?,
        })
    }

    #[staticmethod]
    fn of_spectra(spectra: Vec<PySpectrum>) -> PyResult<Self> {
        let inner: Vec<spectrum::Spectrum> = spectra.into_iter().map(|s| s.inner).collect();
        Ok(Self {
            inner: pattern_stats::census(&inner).map_err(err)?,
        })
    }

    #[getter]
    fn total(&self) -> u64 {
        self.inner.total()
    }

    #[getter]
    fn distinct(&self) -> usize {
        self.inner.distinct()
    }

    fn counts(&self) -> Vec<(Vec<usize>, u64)> {
        self.inner
            .counts()
            .iter()
            .map(|(p, &c)| (p.dims().to_vec(), c))
            .collect()
    }
}

/// Probability that a random without-replacement subset of size `n0`
/// contains every pattern.
#[pyfunction]
fn prob_all_observed(census: &PyPatternCensus, n0: u64) -> PyResult<f64> {
    pattern_stats::prob_all_observed(&census.inner, n0).map_err(err)
}

/// Minimal subset size reaching probability `p0`, and `delta = N / N0`.
/// Returns `(n0, delta, prob_at_n0, prob_at_n0_minus_1)`.
#[pyfunction]
fn dominant_ratio(census: &PyPatternCensus, p0: f64) -> PyResult<(u64, f64, f64, f64)> {
    let r = pattern_stats::dominant_ratio(&census.inner, p0).map_err(err)?;
    Ok((
        r.n0,
        r.delta(),
        r.probability_at_n0,
        r.probability_at_n0_minus_1,
    ))
}

/// Midpoint quantization grid for a pattern.
#[pyclass(name = "QuantGrid", frozen)]
struct PyQuantGrid {
    inner: robustness::QuantGrid,
}

#[pymethods]
impl PyQuantGrid {
    #[new]
    fn new(pattern: Vec<usize>, alphas: Vec<f64>, params: &PySpectrumParams) -> PyResult<Self> {
        let pattern = spectrum::SpikingPattern::new(pattern, params.inner.k).map_err(err)?;
        Ok(Self {
            inner: robustness::build_grid(&pattern, &alphas, &params.inner).map_err(err)?,
        })
    }

    fn counts(&self) -> Vec<u64> {
        self.inner.counts().to_vec()
    }

    fn scales(&self, slot: usize) -> Vec<f64> {
        self.inner.scales(slot)
    }

    fn size(&self) -> u128 {
        self.inner.size()
    }

    fn quantize(&self, z: &PySpectrum) -> PyResult<PySpectrum> {
        Ok(PySpectrum {
            inner: robustness::quantize(&z.inner, &self.inner).map_err(err)?,
        })
    }
}

/// Trainable encoder/decoder pair around the truncation.
#[pyclass(name = "SpectrumVae")]
struct PySpectrumVae {
    inner: model::SpectrumVae,
}

#[pymethods]
impl PySpectrumVae {
    /// Seeded construction with the symmetric uniform initializer.
    #[staticmethod]
    #[pyo3(signature = (params, input_dim, encoder_hidden, decoder_hidden, seed, hidden_activation="tanh"))]
    fn seeded(
        params: &PySpectrumParams,
        input_dim: usize,
        encoder_hidden: Vec<usize>,
        decoder_hidden: Vec<usize>,
        seed: u64,
        hidden_activation: &str,
    ) -> PyResult<Self> {
        let act = hidden_activation.parse().map_err(err)?;
        Ok(Self {
            inner: model::SpectrumVae::seeded(
                params.inner,
                input_dim,
                &encoder_hidden,
                &decoder_hidden,
                act,
                seed,
            )
            .map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: io::load_model(Path::new(path)).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        io::save_model(&self.inner, Path::new(path)).map_err(err)
    }

    fn params(&self) -> PySpectrumParams {
        PySpectrumParams {
            inner: *self.inner.params(),
        }
    }

    fn encode(&self, x: Vec<f64>) -> PyResult<PySpectrum> {
        Ok(PySpectrum {
            inner: self.inner.encode(&x).map_err(err)?,
        })
    }

    fn decode(&self, z: &PySpectrum) -> Vec<f64> {
        self.inner.decode(&z.inner)
    }

    fn reconstruct(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.reconstruct(&x).map_err(err)
    }

    /// Mini-batch gradient descent; returns the trained model.
    #[pyo3(signature = (
        data,
        seed,
        epochs,
        batch_size=32,
        learning_rate=0.02,
        sparsity_weight=0.1,
        pattern_penalty_weight=0.1,
        ste_band=0.1,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &self,
        data: Vec<Vec<f64>>,
        seed: u64,
        epochs: usize,
        batch_size: usize,
        learning_rate: f64,
        sparsity_weight: f64,
        pattern_penalty_weight: f64,
        ste_band: f64,
    ) -> PyResult<Self> {
        let cfg = model::TrainConfig {
            seed,
            epochs,
            batch_size,
            learning_rate,
            sparsity_weight,
            pattern_penalty_weight,
            ste_band,
        };
        Ok(Self {
            inner: model::train(&self.inner, &data, &cfg).map_err(err)?,
        })
    }

    /// Maximum relative deviation between analytic and finite-difference
    /// gradients for a probe input.
    fn gradient_check(&self, x: Vec<f64>, h: f64) -> PyResult<f64> {
        model::gradient_check(&self.inner, &x, h).map_err(err)
    }
}

/// Euclidean distance between a sample and its reconstruction.
#[pyfunction]
fn reconstruction_error(x: Vec<f64>, x_tilde: Vec<f64>) -> PyResult<f64> {
    model::reconstruction_error(&x, &x_tilde).map_err(err)
}

/// Uniform samples from the two-disk support.
#[pyfunction]
#[pyo3(signature = (n, seed, centers=((2.0, 2.0), (5.0, 2.0)), radius=1.2))]
fn gen_two_circles(
    n: usize,
    seed: u64,
    centers: ((f64, f64), (f64, f64)),
    radius: f64,
) -> PyResult<Vec<Vec<f64>>> {
    let support = BoundedSupport::two_disks(
        [
            [centers.0 .0, centers.0 .1],
            [centers.1 .0, centers.1 .1],
        ],
        radius,
    )
    .map_err(err)?;
    support.sample_n(n, seed).map_err(err)
}

/// Covering/packing interval of a box support.
/// Returns `(lower, upper, cover_points)`.
#[pyfunction]
fn essence_bounds_box(
    lower: Vec<f64>,
    upper: Vec<f64>,
    u: f64,
    grid_res: f64,
    seed: u64,
) -> PyResult<(u64, u64, Vec<Vec<f64>>)> {
    let support = BoundedSupport::hyper_box(lower, upper).map_err(err)?;
    let eb = essence::essence_bounds(&support, u, grid_res, seed).map_err(err)?;
    Ok((eb.lower, eb.upper, eb.cover_points))
}

/// Plug-in discrete entropy over equal-width bins.
/// Returns `(bits, out_of_range)`.
#[pyfunction]
fn discrete_entropy(seq: Vec<f64>, lo: f64, hi: f64, bins: usize) -> PyResult<(f64, u64)> {
    let r = info_metrics::discrete_entropy(&seq, lo, hi, bins).map_err(err)?;
    Ok((r.bits, r.out_of_range))
}

/// Per-dimension `(H_orig, H_recon, I)` plus the summed total.
#[pyfunction]
fn mutual_information(
    orig: Vec<Vec<f64>>,
    recon: Vec<Vec<f64>>,
    bounds: Vec<(f64, f64)>,
    bins: usize,
) -> PyResult<(Vec<(f64, f64, f64)>, f64)> {
    let r = info_metrics::mutual_information(&orig, &recon, &bounds, bins).map_err(err)?;
    Ok((
        r.per_dim
            .iter()
            .map(|d| (d.entropy_orig, d.entropy_recon, d.mutual_information))
            .collect(),
        r.total,
    ))
}

/// Runs the full pipeline from a TOML config string; artifacts land in
/// `out_dir`. Returns the manifest as TOML text.
#[pyfunction]
fn run_pipeline(config_toml: &str, out_dir: &str) -> PyResult<String> {
    let config = pipeline::RunConfig::from_toml(config_toml).map_err(err)?;
    let out = pipeline::run_pipeline(&config, Path::new(out_dir)).map_err(err)?;
    Ok(out.manifest.to_toml())
}

/// The committed two-circle demo configuration as TOML text.
#[pyfunction]
fn demo_config() -> String {
    pipeline::RunConfig::two_circles_demo().to_toml()
}

#[pymodule]
fn spectrum_mdl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySpectrumParams>()?;
    m.add_class::<PySpectrum>()?;
    m.add_class::<PyPatternCensus>()?;
    m.add_class::<PyQuantGrid>()?;
    m.add_class::<PySpectrumVae>()?;
    m.add_function(wrap_pyfunction!(truncate, m)?)?;
    m.add_function(wrap_pyfunction!(prob_all_observed, m)?)?;
    m.add_function(wrap_pyfunction!(dominant_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruction_error, m)?)?;
    m.add_function(wrap_pyfunction!(gen_two_circles, m)?)?;
    m.add_function(wrap_pyfunction!(essence_bounds_box, m)?)?;
    m.add_function(wrap_pyfunction!(discrete_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(mutual_information, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(demo_config, m)?)?;
    Ok(())
}
