//! Ground-truth MIMO-OFDM channels from traced paths.
//!
//! For each path `p` with length `d_p`, delay `tau_p = d_p / c`, departure
//! direction `k_T` and arrival direction `k_R`:
//!
//! ```text
//! alpha_p  = lambda / (4 pi d_p) * C_R(k_R)^H Xi_p C_T(k_T)
//! H[n, m] += alpha_p * exp(-j 2 pi f tau_p)
//!                    * exp(-j 2 pi m df tau_p)
//!                    * exp(j k d_n . k_T)
//! ```
//!
//! `Xi_p` is the ordered product of Fresnel reflection matrices at each
//! bounce. Channels are static snapshots, so the Doppler factor is 1.

use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geom::{v3, Vec3};
use crate::raytracer::{PathRecord, PathSet};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

type CVec3 = nalgebra::Vector3<Complex64>;
type CMat3 = nalgebra::Matrix3<Complex64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Carrier frequency in Hz.
    pub f_center: f64,
    /// Total bandwidth in Hz; subcarrier spacing is `bandwidth / n_subcarriers`.
    pub bandwidth: f64,
    pub n_subcarriers: usize,
    pub n_bs_antennas: usize,
    /// ULA element spacing in meters; the array lies along the x axis.
    pub antenna_spacing: f64,
    pub omega_t: Vec<usize>,
    pub omega_c: Vec<usize>,
}

impl SystemConfig {
    /// 5 GHz, 40 MHz over 256 subcarriers, 16-element half-wavelength ULA,
    /// pilots on a 4 x 16 lattice.
    pub fn full_scale() -> Self {
        let f = 5.0e9;
        Self {
            f_center: f,
            bandwidth: 40.0e6,
            n_subcarriers: 256,
            n_bs_antennas: 16,
            antenna_spacing: 0.5 * SPEED_OF_LIGHT / f,
            omega_t: (0..16).step_by(4).collect(),
            omega_c: (0..256).step_by(16).collect(),
        }
    }

    /// Reduced 8 x 32 layout with 2 x 8 pilots (1/16 of the resources).
    pub fn desk() -> Self {
        let f = 5.0e9;
        Self {
            f_center: f,
            bandwidth: 20.0e6,
            n_subcarriers: 32,
            n_bs_antennas: 8,
            antenna_spacing: 0.5 * SPEED_OF_LIGHT / f,
            omega_t: vec![0, 4],
            omega_c: (0..32).step_by(4).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.f_center > 0.0) || !(self.bandwidth > 0.0) {
            return bad("frequencies must be positive");
        }
        if self.n_subcarriers == 0 || self.n_bs_antennas == 0 {
            return bad("array and subcarrier counts must be positive");
        }
        if !(self.antenna_spacing > 0.0) {
            return bad("antenna spacing must be positive");
        }
        for (name, set, n) in [
            ("omega_t", &self.omega_t, self.n_bs_antennas),
            ("omega_c", &self.omega_c, self.n_subcarriers),
        ] {
            if set.is_empty() {
                return Err(Error::InvalidConfig(format!("{name} is empty")));
            }
            if set.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidConfig(format!("{name} must be strictly increasing")));
            }
            if let Some(&last) = set.last() {
                if last >= n {
                    return Err(Error::IndexOutOfRange { index: last, size: n });
                }
            }
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.f_center
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength()
    }

    pub fn subcarrier_spacing(&self) -> f64 {
        self.bandwidth / self.n_subcarriers as f64
    }

    /// Position of antenna `n` relative to the reference element.
    pub fn antenna_offset(&self, n: usize) -> Vec3 {
        Vec3::new(n as f64 * self.antenna_spacing, 0.0, 0.0)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_bs_antennas, self.n_subcarriers)
    }

    pub fn pilot_shape(&self) -> (usize, usize) {
        (self.omega_t.len(), self.omega_c.len())
    }

    /// Free-space amplitude `lambda / (4 pi d)`.
    pub fn spreading_gain(&self, length_m: f64) -> f64 {
        self.wavelength() / (4.0 * PI * length_m)
    }

    /// Array response `exp(j k d_n . k_T)` for every antenna.
    pub fn array_response(&self, depart_dir: Vec3) -> Vec<Complex64> {
        let k = self.wavenumber();
        (0..self.n_bs_antennas)
            .map(|n| Complex64::from_polar(1.0, k * self.antenna_offset(n).dot(&depart_dir)))
            .collect()
    }

    /// Subcarrier response `exp(-j 2 pi m df tau)` for every subcarrier.
    pub fn frequency_response(&self, length_m: f64) -> Vec<Complex64> {
        let tau = length_m / SPEED_OF_LIGHT;
        let df = self.subcarrier_spacing();
        (0..self.n_subcarriers)
            .map(|m| Complex64::from_polar(1.0, -2.0 * PI * m as f64 * df * tau))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AntennaKind {
    Isotropic,
    Dipole,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AntennaModel {
    pub kind: AntennaKind,
    /// Dipole axis (ignored by the isotropic pattern).
    pub orientation: [f64; 3],
}

impl AntennaModel {
    pub fn isotropic() -> Self {
        Self {
            kind: AntennaKind::Isotropic,
            orientation: [0.0, 0.0, 1.0],
        }
    }

    pub fn dipole(axis: Vec3) -> Self {
        Self {
            kind: AntennaKind::Dipole,
            orientation: axis.normalize().into(),
        }
    }

    /// Dipole with an axis drawn uniformly from the unit sphere.
    pub fn random_dipole(rng: &mut impl rand::Rng) -> Self {
        let z: f64 = rng.random_range(-1.0..=1.0);
        let phi: f64 = rng.random_range(0.0..2.0 * PI);
        let r = (1.0 - z * z).max(0.0).sqrt();
        Self::dipole(Vec3::new(r * phi.cos(), r * phi.sin(), z))
    }

    /// Far-field polarization vector in `direction` (a unit vector pointing
    /// away from the antenna).
    pub fn pattern(&self, direction: Vec3) -> CVec3 {
        match self.kind {
            AntennaKind::Dipole => dipole_pattern(v3(self.orientation), direction),
            AntennaKind::Isotropic => {
                // unit gain everywhere, polarized along the z-projected axis
                let mut p = Vec3::z() - direction * direction.z;
                if p.norm() < 1e-12 {
                    p = Vec3::x() - direction * direction.x;
                }
                p.normalize().map(|c| Complex64::new(c, 0.0))
            }
        }
    }
}

/// Hertzian dipole far field: the axis projected orthogonally to the
/// direction, so the magnitude is `sin(theta)` and the polarization lies along
/// the theta unit vector. Zero on the axis.
pub fn dipole_pattern(axis: Vec3, direction: Vec3) -> CVec3 {
    let projected = axis - direction * axis.dot(&direction);
    projected.map(|c| Complex64::new(c, 0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialModel {
    pub relative_permittivity: f64,
    /// Per-face permittivity overrides keyed by face id.
    #[serde(default)]
    pub overrides: BTreeMap<u32, f64>,
}

impl Default for MaterialModel {
    /// Concrete-like permittivity for every face, including the ground.
    fn default() -> Self {
        Self {
            relative_permittivity: 5.31,
            overrides: BTreeMap::new(),
        }
    }
}

impl MaterialModel {
    pub fn permittivity(&self, face_id: u32) -> f64 {
        self.overrides
            .get(&face_id)
            .copied()
            .unwrap_or(self.relative_permittivity)
    }

    pub fn validate(&self) -> Result<()> {
        if self.relative_permittivity < 1.0 || self.overrides.values().any(|&e| e < 1.0) {
            return Err(Error::InvalidConfig("relative permittivity must be >= 1".into()));
        }
        Ok(())
    }

    /// 3 x 3 reflection operator for a ray travelling along `incoming` that
    /// leaves along `outgoing` after bouncing off a face with permittivity
    /// `eps`. Both vectors are unit propagation directions.
    pub fn reflection_matrix(eps: f64, incoming: Vec3, outgoing: Vec3) -> CMat3 {
        let normal = (outgoing - incoming).normalize();
        let cos_i = outgoing.dot(&normal).clamp(0.0, 1.0);
        let sin2 = 1.0 - cos_i * cos_i;
        let root = (eps - sin2).max(0.0).sqrt();
        let gamma_te = (cos_i - root) / (cos_i + root);
        let gamma_tm = (eps * cos_i - root) / (eps * cos_i + root);

        let mut s = incoming.cross(&normal);
        if s.norm() < 1e-12 {
            // normal incidence: any transverse basis works
            s = if normal.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
            s -= normal * s.dot(&normal);
        }
        let s = s.normalize();
        let p_in = s.cross(&incoming);
        let p_out = s.cross(&outgoing);
        let m = s * s.transpose() * gamma_te + p_out * p_in.transpose() * gamma_tm;
        m.map(|c| Complex64::new(c, 0.0))
    }
}

/// Complex path amplitude `alpha_p` including the spreading loss, antenna
/// patterns and reflection operators.
pub fn path_amplitude(
    path: &PathRecord,
    tx: Vec3,
    rx: Vec3,
    cfg: &SystemConfig,
    bs_ant: &AntennaModel,
    user_ant: &AntennaModel,
    material: &MaterialModel,
) -> Complex64 {
    let depart = v3(path.depart_dir);
    let arrive = v3(path.arrive_dir);
    let mut field = bs_ant.pattern(depart);
    let verts = path.vertices(tx, rx);
    for (k, it) in path.interactions.iter().enumerate() {
        let incoming = (verts[k + 1] - verts[k]).normalize();
        let outgoing = (verts[k + 2] - verts[k + 1]).normalize();
        let eps = material.permittivity(it.face_id);
        field = MaterialModel::reflection_matrix(eps, incoming, outgoing) * field;
    }
    let receive = user_ant.pattern(-arrive);
    let coupling: Complex64 = receive
        .iter()
        .zip(field.iter())
        .map(|(r, e)| r.conj() * e)
        .sum();
    coupling * cfg.spreading_gain(path.length_m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix(pub Array2<Complex64>);

impl ChannelMatrix {
    pub fn zeros(shape: (usize, usize)) -> Self {
        Self(Array2::zeros(shape))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn power(&self) -> f64 {
        self.0.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(self.0.mapv(|c| c * s))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartialChannel {
    pub entries: Array2<Complex64>,
    pub omega_t: Vec<usize>,
    pub omega_c: Vec<usize>,
}

impl PartialChannel {
    pub fn power(&self) -> f64 {
        self.entries.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.entries.dim()
    }
}

/// Sums every path's contribution into an `N_t x N_c` matrix. An empty path
/// set yields the zero matrix.
pub fn synthesize_channel(
    paths: &PathSet,
    cfg: &SystemConfig,
    bs_ant: &AntennaModel,
    user_ant: &AntennaModel,
    material: &MaterialModel,
) -> ChannelMatrix {
    let (tx, rx) = (v3(paths.tx), v3(paths.rx));
    let mut h = Array2::<Complex64>::zeros(cfg.shape());
    let f = cfg.f_center;
    for p in &paths.paths {
        let alpha = path_amplitude(p, tx, rx, cfg, bs_ant, user_ant, material);
        let tau = p.length_m / SPEED_OF_LIGHT;
        let carrier = Complex64::from_polar(1.0, -2.0 * PI * f * tau);
        accumulate_path(&mut h, alpha * carrier, cfg, p.length_m, v3(p.depart_dir));
    }
    ChannelMatrix(h)
}

/// Adds `gain * a(k_T) b(tau)^T` to `h`.
pub(crate) fn accumulate_path(
    h: &mut Array2<Complex64>,
    gain: Complex64,
    cfg: &SystemConfig,
    length_m: f64,
    depart_dir: Vec3,
) {
    let a = cfg.array_response(depart_dir);
    let b = cfg.frequency_response(length_m);
    for (n, an) in a.iter().enumerate() {
        let g = gain * an;
        for (m, bm) in b.iter().enumerate() {
            h[[n, m]] += g * bm;
        }
    }
}

/// Noise-free subsampling on `omega_t x omega_c`.
pub fn extract_partial(h: &ChannelMatrix, cfg: &SystemConfig) -> Result<PartialChannel> {
    let (nt, nc) = h.shape();
    for (set, n) in [(&cfg.omega_t, nt), (&cfg.omega_c, nc)] {
        if let Some(&bad) = set.iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange { index: bad, size: n });
        }
    }
    let entries = Array2::from_shape_fn((cfg.omega_t.len(), cfg.omega_c.len()), |(a, b)| {
        h.0[[cfg.omega_t[a], cfg.omega_c[b]]]
    });
    Ok(PartialChannel {
        entries,
        omega_t: cfg.omega_t.clone(),
        omega_c: cfg.omega_c.clone(),
    })
}

/// Multiplies every entry by an independent real draw from `N(1, sigma_d^2)`.
pub fn disturb_partial(hp: &PartialChannel, sigma_d: f64, seed: u64) -> Result<PartialChannel> {
    if !(sigma_d >= 0.0) {
        return Err(Error::InvalidConfig("disturbance std must be non-negative".into()));
    }
    if sigma_d == 0.0 {
        return Ok(hp.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(1.0, sigma_d).expect("finite std");
    let mut out = hp.clone();
    out.entries.mapv_inplace(|c| c * normal.sample(&mut rng));
    Ok(out)
}

/// `||truth - estimate||_F^2 / ||truth||_F^2`.
pub fn nmse(truth: &ChannelMatrix, estimate: &ChannelMatrix) -> Result<f64> {
    if truth.shape() != estimate.shape() {
        return Err(Error::ShapeMismatch {
            expected: truth.shape(),
            got: estimate.shape(),
        });
    }
    let p = truth.power();
    if p == 0.0 {
        return Err(Error::ZeroPowerReference);
    }
    let err: f64 = truth
        .0
        .iter()
        .zip(estimate.0.iter())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    Ok(err / p)
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raytracer::Interaction;
    use proptest::prelude::*;

    fn los_path(length: f64, dir: Vec3) -> PathRecord {
        PathRecord {
            length_m: length,
            depart_dir: dir.into(),
            arrive_dir: dir.into(),
            interactions: vec![],
        }
    }

    fn set_of(paths: Vec<PathRecord>, tx: Vec3, rx: Vec3) -> PathSet {
        PathSet {
            tx: tx.into(),
            rx: rx.into(),
            paths,
        }
    }

    fn rel(a: Complex64, b: Complex64) -> f64 {
        (a - b).norm() / b.norm().max(a.norm())
    }

    #[test]
    fn empty_pathset_is_zero() {
        let cfg = SystemConfig::desk();
        let h = synthesize_channel(
            &set_of(vec![], Vec3::zeros(), Vec3::x()),
            &cfg,
            &AntennaModel::isotropic(),
            &AntennaModel::isotropic(),
            &MaterialModel::default(),
        );
        assert_eq!(h, ChannelMatrix::zeros((8, 32)));
    }

    #[test]
    fn single_los_closed_form() {
        let cfg = SystemConfig::desk();
        let d = SPEED_OF_LIGHT / (4.0 * cfg.subcarrier_spacing());
        let dir = Vec3::new(0.6, 0.8, 0.0);
        let tx = Vec3::new(0.0, 0.0, 10.0);
        let rx = tx + dir * d;
        let h = synthesize_channel(
            &set_of(vec![los_path(d, dir)], tx, rx),
            &cfg,
            &AntennaModel::isotropic(),
            &AntennaModel::isotropic(),
            &MaterialModel::default(),
        );
        let expect = cfg.wavelength() / (4.0 * PI * d);
        for c in h.0.iter() {
            assert!((c.norm() - expect).abs() / expect < 1e-12);
        }
        let quarter = Complex64::new(0.0, -1.0);
        for m in 0..31 {
            assert!(rel(h.0[[0, m + 1]] / h.0[[0, m]], quarter) < 1e-12);
        }
    }

    #[test]
    fn two_path_phasor_sum() {
        let cfg = SystemConfig::desk();
        let df = cfg.subcarrier_spacing();
        let d1 = 80.0;
        let d2 = d1 + SPEED_OF_LIGHT / (2.0 * df);
        let dir = Vec3::new(0.0, 1.0, 0.0);
        // equal amplitudes: rescale the longer path's gain by hand
        let mut h = Array2::zeros(cfg.shape());
        let g = Complex64::new(1.0, 0.0);
        accumulate_path(&mut h, g, &cfg, d1, dir);
        accumulate_path(&mut h, g, &cfg, d2, dir);
        for m in 0..32 {
            // independent phasor evaluation
            let t1 = -2.0 * PI * m as f64 * df * d1 / SPEED_OF_LIGHT;
            let t2 = -2.0 * PI * m as f64 * df * d2 / SPEED_OF_LIGHT;
            let expect = Complex64::from_polar(1.0, t1) + Complex64::from_polar(1.0, t2);
            assert!((h[[0, m]] - expect).norm() < 1e-12);
            let mag = h[[0, m]].norm();
            if m % 2 == 0 {
                assert!((mag - 2.0).abs() < 1e-9);
            } else {
                assert!(mag < 1e-9);
            }
        }
    }

    #[test]
    fn dipole_pattern_cases() {
        let axis = Vec3::z();
        let broad = dipole_pattern(axis, Vec3::x());
        let b = broad.map(|c| c.re);
        assert!((b.norm() - 1.0).abs() < 1e-15);
        assert!((b.dot(&axis).abs() - 1.0).abs() < 1e-15);
        assert!(dipole_pattern(axis, Vec3::z()).iter().all(|c| c.norm() == 0.0));
        let t = 30f64.to_radians();
        let d = Vec3::new(t.sin(), 0.0, t.cos());
        let p = dipole_pattern(axis, d).map(|c| c.re);
        assert!((p.norm() - 0.5).abs() < 1e-12);
        assert!(p.dot(&d).abs() < 1e-15);
    }

    #[test]
    fn extract_partial_full_scale_layout() {
        let cfg = SystemConfig::full_scale();
        let h = ChannelMatrix(Array2::from_shape_fn((16, 256), |(n, m)| {
            Complex64::new(n as f64, m as f64)
        }));
        let p = extract_partial(&h, &cfg).unwrap();
        assert_eq!(p.shape(), (4, 16));
        assert_eq!(p.entries[[0, 0]], h.0[[0, 0]]);
        assert_eq!(p.entries[[3, 15]], h.0[[12, 240]]);

        let mut full = cfg.clone();
        full.omega_t = (0..16).collect();
        full.omega_c = (0..256).collect();
        assert_eq!(extract_partial(&h, &full).unwrap().entries, h.0);

        let mut bad = cfg.clone();
        bad.omega_c.push(300);
        assert!(matches!(
            extract_partial(&h, &bad),
            Err(Error::IndexOutOfRange { index: 300, .. })
        ));
    }

    #[test]
    fn disturbance_moments_and_determinism() {
        let hp = PartialChannel {
            entries: Array2::from_elem((100, 1000), Complex64::new(1.0, 0.0)),
            omega_t: vec![],
            omega_c: vec![],
        };
        assert_eq!(disturb_partial(&hp, 0.0, 3).unwrap(), hp);
        let a = disturb_partial(&hp, 0.1, 3).unwrap();
        assert_eq!(a, disturb_partial(&hp, 0.1, 3).unwrap());
        let n = a.entries.len() as f64;
        let mean = a.entries.iter().map(|c| c.re).sum::<f64>() / n;
        let var = a.entries.iter().map(|c| (c.re - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((0.999..=1.001).contains(&mean), "mean {mean}");
        assert!((0.099..=0.101).contains(&var.sqrt()), "std {}", var.sqrt());
        assert!(a.entries.iter().all(|c| c.im == 0.0));
    }

    #[test]
    fn nmse_cases() {
        let t = ChannelMatrix(Array2::from_shape_fn((4, 5), |(a, b)| {
            Complex64::new(a as f64 + 1.0, b as f64)
        }));
        assert_eq!(nmse(&t, &t).unwrap(), 0.0);
        assert_eq!(nmse(&t, &ChannelMatrix::zeros((4, 5))).unwrap(), 1.0);
        assert!((nmse(&t, &t.scaled(2.0)).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            nmse(&ChannelMatrix::zeros((4, 5)), &t),
            Err(Error::ZeroPowerReference)
        ));
        assert!(nmse(&t, &ChannelMatrix::zeros((5, 4))).is_err());
    }

    #[test]
    fn normal_incidence_fresnel_is_scalar() {
        let eps = 5.31;
        let m = MaterialModel::reflection_matrix(eps, -Vec3::y(), Vec3::y());
        let g = (1.0 - eps.sqrt()) / (1.0 + eps.sqrt());
        for v in [Vec3::x(), Vec3::z()] {
            let out = m * v.map(|c| Complex64::new(c, 0.0));
            for (o, e) in out.iter().zip((v * g).iter()) {
                assert!((o.re - e).abs() < 1e-12 && o.im == 0.0);
            }
        }
    }

    #[test]
    fn reflection_keeps_field_transverse() {
        let incoming = Vec3::new(0.3, -0.8, -0.2).normalize();
        let n = Vec3::y();
        let outgoing = incoming - n * (2.0 * incoming.dot(&n));
        let m = MaterialModel::reflection_matrix(4.0, incoming, outgoing);
        let e_in = dipole_pattern(Vec3::new(0.1, 0.4, 0.9).normalize(), incoming);
        let e_out = m * e_in;
        let dot: Complex64 = e_out
            .iter()
            .zip(outgoing.iter())
            .map(|(e, k)| e * *k)
            .sum();
        assert!(dot.norm() < 1e-12);
    }

    fn random_path(vals: &[f64]) -> PathRecord {
        let dir = Vec3::new(vals[0], vals[1], vals[2]).normalize();
        PathRecord {
            length_m: 10.0 + 200.0 * vals[3].abs(),
            depart_dir: dir.into(),
            arrive_dir: dir.into(),
            interactions: vec![],
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn union_is_sum_and_ula_progression(
            a in proptest::collection::vec(-1.0..1.0f64, 4),
            b in proptest::collection::vec(-1.0..1.0f64, 4),
            axis in proptest::collection::vec(-1.0..1.0f64, 3),
        ) {
            prop_assume!(Vec3::new(a[0], a[1], a[2]).norm() > 0.1);
            prop_assume!(Vec3::new(b[0], b[1], b[2]).norm() > 0.1);
            prop_assume!(Vec3::new(axis[0], axis[1], axis[2]).norm() > 0.1);
            let cfg = SystemConfig::desk();
            let user = AntennaModel::dipole(Vec3::new(axis[0], axis[1], axis[2]));
            let bs = AntennaModel::dipole(Vec3::z());
            let mat = MaterialModel::default();
            let (tx, rx) = (Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0));
            let pa = random_path(&a);
            let pb = random_path(&b);
            let ha = synthesize_channel(&set_of(vec![pa.clone()], tx, rx), &cfg, &bs, &user, &mat);
            let hb = synthesize_channel(&set_of(vec![pb.clone()], tx, rx), &cfg, &bs, &user, &mat);
            let hab = synthesize_channel(&set_of(vec![pa, pb], tx, rx), &cfg, &bs, &user, &mat);
            let scale = hab.0.iter().map(|c| c.norm()).fold(0.0, f64::max).max(1e-300);
            for ((x, y), z) in ha.0.iter().zip(hb.0.iter()).zip(hab.0.iter()) {
                prop_assert!((x + y - z).norm() / scale < 1e-12);
            }
            let amp = ha.0[[0, 0]].norm();
            if amp > 0.0 {
                let ratio = ha.0[[1, 0]] / ha.0[[0, 0]];
                for n in 0..7 {
                    for m in 0..32 {
                        prop_assert!((ha.0[[n, m]].norm() - amp).abs() / amp < 1e-12);
                        prop_assert!(rel(ha.0[[n + 1, m]] / ha.0[[n, m]], ratio) < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn reflected_path_amplitude_is_reduced() {
        let cfg = SystemConfig::desk();
        let tx = Vec3::new(0.0, 5.0, 1.5);
        let rx = Vec3::new(10.0, 5.0, 1.5);
        let q = Vec3::new(5.0, 0.0, 1.5);
        let p = PathRecord {
            length_m: 200f64.sqrt(),
            depart_dir: (q - tx).normalize().into(),
            arrive_dir: (rx - q).normalize().into(),
            interactions: vec![Interaction { face_id: 3, point: q.into() }],
        };
        let iso = AntennaModel::dipole(Vec3::z());
        let a = path_amplitude(&p, tx, rx, &cfg, &iso, &iso, &MaterialModel::default());
        let free = cfg.spreading_gain(p.length_m);
        assert!(a.norm() < free && a.norm() > 0.1 * free);
    }
}
