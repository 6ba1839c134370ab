//! Least-squares decoder from rendered pixels back to synthetic face parameters.
//!
//! The regressor is fit once on renders of random specs and then used to
//! read identity and expression off any image, synthesized ones included.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::preprocess;
use crate::data::synthetic::{render_synthetic_face, Expression, Identity, SyntheticFaceSpec};
use crate::error::{Error, Result};
use crate::model::{IMAGE_CHANNELS, IMAGE_SIZE};
use crate::tensor::{Scalar, Tensor};

pub const ORACLE_SAMPLES: usize = 4000;
pub const ORACLE_SEED: u64 = 0x0005_eed0_ac1e;
const RIDGE: f64 = 1e-4;

/// Pixels that are skin for every identity and expression.
const CHEEK_PATCHES: [[usize; 4]; 2] = [[9, 11, 17, 19], [21, 23, 17, 19]];

const AREA: usize = IMAGE_SIZE * IMAGE_SIZE;
const N_FEATURES: usize = 3 + 2 * AREA;

#[derive(Clone, Debug)]
pub struct OracleRegressor {
    /// `N_FEATURES × 8`, outputs in spec array order.
    coef: DMatrix<f64>,
}

fn luminance(img: &Tensor<f32>) -> Result<Vec<f64>> {
    let data = match img.shape() {
        [3, 32, 32] | [1, 3, 32, 32] => img.data(),
        s => return Err(Error::Shape(format!("oracle expects a [3, 32, 32] image, got {s:?}"))),
    };
    Ok((0..AREA)
        .map(|i| {
            let rgb: Vec<f64> = (0..IMAGE_CHANNELS).map(|c| data[c * AREA + i] as f64).collect();
            0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
        })
        .collect())
}

/// Luminance of the brow colour on the `[-1, 1]` scale.
const DARK_REFERENCE: f64 = -0.67;

/// Pixel luminance, plus darkness relative to the estimated skin level.
///
/// Dividing by the skin/dark contrast makes the darkness of a feature pixel
/// its coverage, independent of skin tone.
fn features(img: &Tensor<f32>) -> Result<Vec<f64>> {
    let lum = luminance(img)?;
    let mut skin = 0.0;
    let mut n = 0.0;
    for [x0, x1, y0, y1] in CHEEK_PATCHES {
        for y in y0..y1 {
            for x in x0..x1 {
                skin += lum[y * IMAGE_SIZE + x];
                n += 1.0;
            }
        }
    }
    let skin = skin / n;
    let contrast = (skin - DARK_REFERENCE).max(0.05);
    let mut f = Vec::with_capacity(N_FEATURES);
    f.extend([1.0, skin, skin * skin]);
    f.extend_from_slice(&lum);
    f.extend(lum.iter().map(|v| (skin - v) / contrast));
    Ok(f)
}

fn random_spec(rng: &mut impl Rng) -> SyntheticFaceSpec {
    let identity = Identity::from_array([(); 4].map(|_| rng.random::<f64>()));
    let expression =
        Expression::from_array([(); 4].map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random::<f64>() }));
    SyntheticFaceSpec { identity, expression }
}

impl OracleRegressor {
    /// Ridge regression on `n` renders of random specs.
    pub fn fit(n: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Row-major design matrix and targets.
        let mut x = Vec::with_capacity(n * N_FEATURES);
        let mut y = Vec::with_capacity(n * 8);
        for _ in 0..n {
            let spec = random_spec(&mut rng);
            x.extend(features(&preprocess(&render_synthetic_face(&spec)?))?);
            y.extend(spec.to_array());
        }
        // X^T X and X^T Y via strided GEMM; column-major results for nalgebra.
        let mut gram = vec![0.0; N_FEATURES * N_FEATURES];
        let t = (1, N_FEATURES);
        f64::gemm(
            N_FEATURES,
            n,
            N_FEATURES,
            1.0,
            &x,
            t,
            &x,
            (N_FEATURES, 1),
            0.0,
            &mut gram,
            (1, N_FEATURES),
        );
        let mut rhs = vec![0.0; N_FEATURES * 8];
        f64::gemm(N_FEATURES, n, 8, 1.0, &x, t, &y, (8, 1), 0.0, &mut rhs, (1, N_FEATURES));
        let mut gram = DMatrix::from_vec(N_FEATURES, N_FEATURES, gram);
        let rhs = DMatrix::from_vec(N_FEATURES, 8, rhs);
        let scale = gram.diagonal().mean();
        for i in 1..N_FEATURES {
            gram[(i, i)] += RIDGE * scale;
        }
        let coef = gram
            .cholesky()
            .ok_or_else(|| Error::Numeric("oracle normal equations are not positive definite".into()))?
            .solve(&rhs);
        Ok(Self { coef })
    }

    /// Regressed spec parameters in `[skin_tone, ..., mouth_corner]` order, unclamped.
    pub fn predict(&self, img: &Tensor<f32>) -> Result<[f64; 8]> {
        let f = DVector::from_vec(features(img)?);
        let out = self.coef.tr_mul(&f);
        Ok([0, 1, 2, 3, 4, 5, 6, 7].map(|i| out[i]))
    }

    pub fn identity(&self, img: &Tensor<f32>) -> Result<[f64; 4]> {
        let p = self.predict(img)?;
        Ok([p[0], p[1], p[2], p[3]])
    }

    pub fn expression(&self, img: &Tensor<f32>) -> Result<[f64; 4]> {
        let p = self.predict(img)?;
        Ok([p[4], p[5], p[6], p[7]])
    }
}

/// The process-wide regressor fit with the default sample count and seed.
pub fn shared_oracle() -> &'static OracleRegressor {
    static ORACLE: OnceLock<OracleRegressor> = OnceLock::new();
    ORACLE.get_or_init(|| OracleRegressor::fit(ORACLE_SAMPLES, ORACLE_SEED).expect("oracle fit on clean renders"))
}
