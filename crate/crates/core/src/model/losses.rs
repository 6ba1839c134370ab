use serde::{Deserialize, Serialize};

use super::{ModelParams, ModelVars, SynthesisNodes, Trainable};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{Scalar, Tensor};

/// Weights of the reconstruction and the two adversarial terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta1: 1e-2,
            beta2: 1e-3,
        }
    }
}

/// Scalar values of every loss term for one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBundle {
    /// Mean squared reconstruction error against the target image.
    pub l_r: f64,
    /// Latent discriminator loss: prior samples real, codes fake.
    pub l_e_d: f64,
    /// Encoder-side latent adversarial loss (codes labelled real).
    pub l_e_g: f64,
    /// Image discriminator loss: source images real, synthesized fake.
    pub l_g_d: f64,
    /// Decoder-side image adversarial loss (synthesized labelled real).
    pub l_g_g: f64,
    /// `alpha·l_r + beta1·l_e_g + beta2·l_g_g`.
    pub total_ae: f64,
}

impl LossBundle {
    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    pub fn as_array(&self) -> [f64; 6] {
        [self.l_r, self.l_e_d, self.l_e_g, self.l_g_d, self.l_g_g, self.total_ae]
    }

    pub const FIELD_NAMES: [&'static str; 6] = ["l_r", "l_e_d", "l_e_g", "l_g_d", "l_g_g", "total_ae"];
}

/// Graph nodes for every loss term.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub synthesis: SynthesisNodes,
    pub l_r: Var,
    pub l_e_d: Var,
    pub l_e_g: Var,
    pub l_g_d: Var,
    pub l_g_g: Var,
    pub total_ae: Var,
    /// `l_e_d + l_g_d`; both discriminators step on this together.
    pub discriminator_total: Var,
}

impl LossVars {
    pub fn bundle<T: Scalar>(&self, g: &Graph<T>) -> LossBundle {
        let v = |x: Var| g.value(x).data()[0].as_f64();
        LossBundle {
            l_r: v(self.l_r),
            l_e_d: v(self.l_e_d),
            l_e_g: v(self.l_e_g),
            l_g_d: v(self.l_g_d),
            l_g_g: v(self.l_g_g),
            total_ae: v(self.total_ae),
        }
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Records the forward pass and every loss term into `g`.
    ///
    /// `source`/`target` are `[N,3,32,32]`, `labels` `[N, label_dim]`,
    /// `z_prior` `[N, 100]` drawn from the standard normal prior.
    #[allow(clippy::too_many_arguments)]
    pub fn build_losses(
        &self,
        g: &mut Graph<T>,
        vars: &ModelVars,
        source: Var,
        target: Var,
        labels: Var,
        z_prior: Var,
        weights: LossWeights,
    ) -> Result<LossVars> {
        let n = g.value(source).shape()[0];
        if g.value(target).shape() != g.value(source).shape() {
            return Err(Error::Shape(format!(
                "source {:?} and target {:?} differ",
                g.value(source).shape(),
                g.value(target).shape()
            )));
        }
        if g.value(z_prior).shape()[0] != n {
            return Err(Error::Shape("prior sample batch differs from image batch".into()));
        }
        let synthesis = self.synthesize_graph(g, vars, source, labels)?;
        let ones = Tensor::full(&[n, 1], T::one());
        let zeros = Tensor::zeros(&[n, 1]);

        let l_r = g.mse_loss(target, synthesis.output)?;

        let d_prior = self.latent_logits_graph(g, vars, z_prior)?;
        let d_code = self.latent_logits_graph(g, vars, synthesis.z)?;
        let real = g.bce_with_logits(d_prior, &ones)?;
        let fake = g.bce_with_logits(d_code, &zeros)?;
        let l_e_d = g.weighted_sum(&[(real, 1.0), (fake, 1.0)])?;
        let l_e_g = g.bce_with_logits(d_code, &ones)?;

        let d_source = self.image_logits_graph(g, vars, source)?;
        let d_synth = self.image_logits_graph(g, vars, synthesis.output)?;
        let real = g.bce_with_logits(d_source, &ones)?;
        let fake = g.bce_with_logits(d_synth, &zeros)?;
        let l_g_d = g.weighted_sum(&[(real, 1.0), (fake, 1.0)])?;
        let l_g_g = g.bce_with_logits(d_synth, &ones)?;

        let total_ae = g.weighted_sum(&[(l_r, weights.alpha), (l_e_g, weights.beta1), (l_g_g, weights.beta2)])?;
        let discriminator_total = g.weighted_sum(&[(l_e_d, 1.0), (l_g_d, 1.0)])?;
        Ok(LossVars {
            synthesis,
            l_r,
            l_e_d,
            l_e_g,
            l_g_d,
            l_g_g,
            total_ae,
            discriminator_total,
        })
    }

    /// Evaluates all loss terms on constant inputs.
    pub fn compute_losses(
        &self,
        source: &Tensor<T>,
        target: &Tensor<T>,
        labels: &Tensor<T>,
        z_prior: &Tensor<T>,
        weights: LossWeights,
    ) -> Result<LossBundle> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, Trainable::NONE);
        let s = g.constant(source.clone());
        let t = g.constant(target.clone());
        let l = g.constant(labels.clone());
        let z = g.constant(z_prior.clone());
        let lv = self.build_losses(&mut g, &vars, s, t, l, z, weights)?;
        let bundle = lv.bundle(&g);
        if !bundle.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss: {bundle:?}")));
        }
        Ok(bundle)
    }
}
