use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, InitialKind, KappaConfig, KappaKind, SourceConfig, SourceKind};
use super::io::{format_grid, read_kappa, read_nodal};
use crate::error::{Error, Result};
use crate::femcore::CoefficientField;
use crate::grid::Mesh;

const ATTEMPTS_PER_STRIKE: usize = 1000;

/// Background 1 with `strikes` non-overlapping straight strikes of value
/// `contrast`, one fine cell thick, horizontal or vertical.
pub fn generate_kappa(mesh: &Mesh, cfg: &KappaConfig) -> Result<CoefficientField> {
    if cfg.contrast < 1.0 || !cfg.contrast.is_finite() {
        return Err(Error::InvalidArgument(format!("contrast must be finite and >= 1, got {}", cfg.contrast)));
    }
    if cfg.min_length == 0 || cfg.min_length > cfg.max_length {
        return Err(Error::InvalidArgument("strike lengths must satisfy 1 <= min <= max".into()));
    }
    let n = mesh.cells_per_side();
    let mut values = vec![1.0; n * n];
    if cfg.contrast == 1.0 {
        return CoefficientField::new(mesh, values);
    }
    let mut taken = vec![false; n * n];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (lo, hi) = (cfg.min_length.min(n), cfg.max_length.min(n));
    let mut attempts = 0;
    for _ in 0..cfg.strikes {
        let mut placed = false;
        for _ in 0..ATTEMPTS_PER_STRIKE {
            attempts += 1;
            let len = rng.random_range(lo..=hi);
            let horizontal = rng.random_bool(0.5);
            let a = rng.random_range(0..=n - len);
            let b = rng.random_range(0..n);
            let cells: Vec<usize> = (a..a + len)
                .map(|s| if horizontal { b * n + s } else { s * n + b })
                .collect();
            if cells.iter().all(|&c| !taken[c]) {
                for c in cells {
                    taken[c] = true;
                    values[c] = cfg.contrast;
                }
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::StrikePlacement { attempts });
        }
    }
    CoefficientField::new(mesh, values)
}

/// Hex SHA-256 of the text form of a coefficient grid.
pub fn fingerprint(mesh: &Mesh, kappa: &CoefficientField) -> String {
    let digest = Sha256::digest(format_grid(kappa.values(), mesh.cells_per_side()).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn load_kappa(mesh: &Mesh, cfg: &KappaConfig) -> Result<CoefficientField> {
    match cfg.kind {
        KappaKind::Generated => generate_kappa(mesh, cfg),
        KappaKind::File => {
            let path = cfg.path.as_ref().ok_or_else(|| Error::InvalidArgument("kappa file path missing".into()))?;
            read_kappa(mesh, path)
        }
    }
}

/// Nodal source over interior nodes.
///
/// `Singular` puts `+magnitude` on the closed coarse block `(q, q)` and
/// `-magnitude` on `(nc - 1 - q, q)` with `q = nc / 4`.
pub fn make_source(mesh: &Mesh, cfg: &SourceConfig) -> Result<DVector<f64>> {
    let m = cfg.magnitude;
    match cfg.kind {
        SourceKind::Zero => Ok(DVector::zeros(mesh.interior_count())),
        SourceKind::Smooth => Ok(mesh.interpolate(|x, y| {
            m * (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin()
        })),
        SourceKind::Singular => {
            let nc = mesh.n_coarse_per_side();
            let q = nc / 4;
            let r = nc - 1 - q;
            if r == q {
                return Err(Error::InvalidArgument(
                    "singular source needs at least two coarse blocks per side".into(),
                ));
            }
            let h = mesh.coarse_size();
            let inside = |x: f64, y: f64, bi: usize, bj: usize| {
                let eps = 1e-12;
                x >= bi as f64 * h - eps
                    && x <= (bi + 1) as f64 * h + eps
                    && y >= bj as f64 * h - eps
                    && y <= (bj + 1) as f64 * h + eps
            };
            Ok(mesh.interpolate(|x, y| {
                let mut v = 0.0;
                if inside(x, y, q, q) {
                    v += m;
                }
                if inside(x, y, r, q) {
                    v -= m;
                }
                v
            }))
        }
        SourceKind::File => {
            let path = cfg.path.as_ref().ok_or_else(|| Error::InvalidArgument("source file path missing".into()))?;
            read_nodal(mesh, path)
        }
    }
}

pub fn initial_field(mesh: &Mesh, cfg: &ExperimentConfig) -> DVector<f64> {
    match cfg.initial.kind {
        InitialKind::Zero => DVector::zeros(mesh.interior_count()),
        InitialKind::Bump => {
            let a = cfg.initial.amplitude;
            mesh.interpolate(|x, y| a * (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(contrast: f64, strikes: usize, seed: u64) -> KappaConfig {
        KappaConfig {
            contrast,
            strikes,
            seed,
            ..KappaConfig::default()
        }
    }

    #[test]
    fn reference_field() {
        let mesh = Mesh::new(10, 10).unwrap();
        let k = generate_kappa(&mesh, &cfg(1e4, 20, 7)).unwrap();
        assert_eq!(k.min(), 1.0);
        assert_eq!(k.max(), 1e4);
        let again = generate_kappa(&mesh, &cfg(1e4, 20, 7)).unwrap();
        assert_eq!(fingerprint(&mesh, &k), fingerprint(&mesh, &again));
        let other = generate_kappa(&mesh, &cfg(1e4, 20, 8)).unwrap();
        assert_ne!(fingerprint(&mesh, &k), fingerprint(&mesh, &other));
    }

    #[test]
    fn unit_contrast_and_crowding() {
        let mesh = Mesh::new(2, 3).unwrap();
        let k = generate_kappa(&mesh, &cfg(1.0, 20, 1)).unwrap();
        assert!(k.values().iter().all(|&v| v == 1.0));
        // 6 x 6 cells cannot hold 40 disjoint strikes of length 6.
        let err = generate_kappa(&mesh, &cfg(10.0, 40, 1)).unwrap_err();
        assert!(matches!(err, Error::StrikePlacement { .. }));
    }

    #[test]
    fn singular_source_balances() {
        for nc in [2, 3, 5, 10] {
            let mesh = Mesh::new(nc, 4).unwrap();
            let g = make_source(&mesh, &SourceConfig::default()).unwrap();
            assert!(g.sum().abs() < 1e-9, "nc = {nc}");
            assert!(g.max() > 0.0 && g.min() < 0.0);
        }
        let mesh = Mesh::new(1, 4).unwrap();
        assert!(make_source(&mesh, &SourceConfig::default()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn strikes_are_disjoint_and_sized(seed in 0u64..10_000, strikes in 0usize..6) {
            let mesh = Mesh::new(5, 5).unwrap();
            let c = KappaConfig { min_length: 3, max_length: 8, ..cfg(100.0, strikes, seed) };
            let k = generate_kappa(&mesh, &c).unwrap();
            let high = k.values().iter().filter(|&&v| v == 100.0).count();
            prop_assert!(high >= 3 * strikes && high <= 8 * strikes);
            prop_assert!(k.values().iter().all(|&v| v == 1.0 || v == 100.0));
        }
    }
}
