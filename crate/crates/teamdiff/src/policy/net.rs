//! Forward passes of the denoiser and its ablation variants.

use super::{init_matrix, zero_vector, BoundParams, ForwardNoise, ModelDims, ParamStore};
use crate::rng::{rng_from_seed, ChaCha8Rng};
use crate::tensor::{concat, Tape, Tensor, Var};

/// Which network sits between the action embedding and the feature
/// `h`. The FiLM-modulated residual stack is the real model; the plain
/// MLP and the 1-D down/up stack exist as ablation baselines.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DenoiserVariant {
    Film,
    Mlp,
    Unet,
}

impl DenoiserVariant {
    pub fn id(self) -> &'static str {
        match self {
            DenoiserVariant::Film => "film",
            DenoiserVariant::Mlp => "mlp",
            DenoiserVariant::Unet => "unet",
        }
    }

    pub fn parse(s: &str) -> crate::error::Result<Self> {
        Ok(match s {
            "film" => DenoiserVariant::Film,
            "mlp" => DenoiserVariant::Mlp,
            "unet" => DenoiserVariant::Unet,
            other => {
                return Err(crate::error::Error::config(format!(
                    "unknown denoiser variant `{other}`"
                )))
            }
        })
    }
}

/// Everything the training step needs from one denoiser forward pass.
pub struct DenoiseVars<'t> {
    pub x0_logits: Var<'t>,
    /// Intermediate feature tapped for the guidance heads.
    pub h: Var<'t>,
    pub mu: Var<'t>,
    pub sigma: Var<'t>,
    pub z: Var<'t>,
}

pub struct PolicyNet {
    pub dims: ModelDims,
    pub variant: DenoiserVariant,
    pub params: ParamStore,
}

impl PolicyNet {
    pub fn new(dims: ModelDims, variant: DenoiserVariant, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let mut p = ParamStore::new();
        init_encoder(&mut p, &dims, &mut rng);
        init_condition(&mut p, &dims, &mut rng);
        init_action_embed(&mut p, &dims, &mut rng);
        match variant {
            DenoiserVariant::Film => init_film_blocks(&mut p, &dims, &mut rng),
            DenoiserVariant::Mlp => init_mlp_variant(&mut p, &dims, &mut rng),
            DenoiserVariant::Unet => init_unet_variant(&mut p, &dims, &mut rng),
        }
        // Small output head so the initial reverse kernels stay near
        // the prior.
        p.insert("out.w", init_matrix(&mut rng, dims.d_h, dims.action_count, 0.05));
        p.insert("out.b", zero_vector(dims.action_count));
        init_guidance(&mut p, &dims, &mut rng);
        PolicyNet { dims, variant, params: p }
    }

    /// Windowed Gaussian encoder. Returns (mu, sigma, z); `z` is the
    /// reparameterized sample in train mode and exactly `mu` in eval
    /// mode.
    pub fn encode_history<'t>(
        &self,
        tape: &'t Tape,
        bound: &BoundParams<'t>,
        window: &[f64],
        mask: &[f64],
        noise: &ForwardNoise,
    ) -> (Var<'t>, Var<'t>, Var<'t>) {
        let d = &self.dims;
        assert_eq!(window.len(), d.window * d.state_bits, "window shape mismatch");
        assert_eq!(mask.len(), d.window, "mask shape mismatch");
        // Masked slots are zeroed (zero-padding already is, this
        // enforces the contract for callers handing in raw buffers).
        let mut masked = window.to_vec();
        for (slot, &m) in mask.iter().enumerate() {
            if m == 0.0 {
                for v in &mut masked[slot * d.state_bits..(slot + 1) * d.state_bits] {
                    *v = 0.0;
                }
            }
        }
        let x = tape.constant(&masked);
        let h1 = (x.matmul(bound.get("enc.w1")) + bound.get("enc.b1")).relu();
        let h2 = (h1.matmul(bound.get("enc.w2")) + bound.get("enc.b2")).relu();
        let mu = h2.matmul(bound.get("enc.mu_w")) + bound.get("enc.mu_b");
        let sigma =
            (h2.matmul(bound.get("enc.sig_w")) + bound.get("enc.sig_b")).softplus().add_scalar(1e-4);
        let z = match &noise.eps_z {
            Some(eps) => {
                assert_eq!(eps.len(), d.d_z, "latent noise shape mismatch");
                mu + sigma.mul_mask(eps)
            }
            None => mu,
        };
        (mu, sigma, z)
    }

    /// Sinusoidal step embedding followed by a learned projection.
    pub fn embed_step<'t>(&self, tape: &'t Tape, bound: &BoundParams<'t>, k: usize) -> Var<'t> {
        let d = &self.dims;
        assert!(k >= 1 && k <= d.k_steps, "diffusion step {k} out of range");
        let sins = sinusoid(k, d.d_c);
        let s = tape.constant(&sins);
        s.matmul(bound.get("cond.k_w")) + bound.get("cond.k_b")
    }

    /// Condition vector: embedded latent plus embedded step.
    pub fn condition<'t>(
        &self,
        tape: &'t Tape,
        bound: &BoundParams<'t>,
        z: Var<'t>,
        k: usize,
    ) -> Var<'t> {
        let ze = z.matmul(bound.get("cond.z_w")) + bound.get("cond.z_b");
        ze + self.embed_step(tape, bound, k)
    }

    /// FiLM parameters (gamma1, beta1, gamma2, beta2) for one block.
    pub fn film_params<'t>(
        &self,
        bound: &BoundParams<'t>,
        block: &str,
        c: Var<'t>,
    ) -> (Var<'t>, Var<'t>, Var<'t>, Var<'t>) {
        let d_h = self.dims.d_h;
        let hidden = (c.matmul(bound.get(&format!("{block}.film_w1")))
            + bound.get(&format!("{block}.film_b1")))
        .relu();
        let all = hidden.matmul(bound.get(&format!("{block}.film_w2")))
            + bound.get(&format!("{block}.film_b2"));
        let gamma1 = all.slice_range(0, d_h);
        let beta1 = all.slice_range(d_h, d_h);
        let gamma2 = all.slice_range(2 * d_h, d_h);
        let beta2 = all.slice_range(3 * d_h, d_h);
        (gamma1, beta1, gamma2, beta2)
    }

    /// One FiLM-modulated residual block:
    /// `gamma2 * MLP(gamma1 * LN(x) + beta1) + beta2 + x` with the inner
    /// MLP being linear -> relu -> dropout -> linear.
    #[allow(clippy::too_many_arguments)]
    pub fn film_block<'t>(
        &self,
        bound: &BoundParams<'t>,
        block: &str,
        x: Var<'t>,
        film: (Var<'t>, Var<'t>, Var<'t>, Var<'t>),
        dropout_mask: Option<&[f64]>,
    ) -> Var<'t> {
        let (gamma1, beta1, gamma2, beta2) = film;
        let normed = x.layer_norm(
            bound.get(&format!("{block}.ln_gain")),
            bound.get(&format!("{block}.ln_bias")),
            1e-5,
        );
        let modulated = gamma1 * normed + beta1;
        let mut inner = (modulated.matmul(bound.get(&format!("{block}.mlp_w1")))
            + bound.get(&format!("{block}.mlp_b1")))
        .relu();
        if let Some(mask) = dropout_mask {
            inner = inner.mul_mask(mask);
        }
        let inner =
            inner.matmul(bound.get(&format!("{block}.mlp_w2"))) + bound.get(&format!("{block}.mlp_b2"));
        gamma2 * inner + beta2 + x
    }

    /// Denoiser body from a latent context variable: embeds the
    /// corrupted action, runs the variant network, and projects to
    /// clean-action logits. Returns (logits, h).
    pub fn denoise_from_z<'t>(
        &self,
        tape: &'t Tape,
        bound: &BoundParams<'t>,
        z: Var<'t>,
        a_k: usize,
        k: usize,
        noise: &ForwardNoise,
    ) -> (Var<'t>, Var<'t>) {
        let d = &self.dims;
        assert!(a_k < d.action_count, "corrupted action out of range");
        let c = self.condition(tape, bound, z, k);
        let e = bound.get("act_embed.table").embedding(a_k);
        let h = match self.variant {
            DenoiserVariant::Film => {
                let x = e.matmul(bound.get("act_proj.w")) + bound.get("act_proj.b");
                let film1 = self.film_params(bound, "block1", c);
                let x = self.film_block(bound, "block1", x, film1, noise.dropout.first().map(|m| m.as_slice()));
                let film2 = self.film_params(bound, "block2", c);
                self.film_block(bound, "block2", x, film2, noise.dropout.get(1).map(|m| m.as_slice()))
            }
            DenoiserVariant::Mlp => {
                let x = concat(&[e, c]);
                let h1 = (x.matmul(bound.get("var.w1")) + bound.get("var.b1")).relu();
                (h1.matmul(bound.get("var.w2")) + bound.get("var.b2")).relu()
            }
            DenoiserVariant::Unet => {
                let x = concat(&[e, c]);
                let d1 = (x.matmul(bound.get("un.d1_w")) + bound.get("un.d1_b")).relu();
                let d2 = (d1.matmul(bound.get("un.d2_w")) + bound.get("un.d2_b")).relu();
                let u1 = (d2.matmul(bound.get("un.u1_w")) + bound.get("un.u1_b")).relu();
                let cat = concat(&[u1, d1]);
                (cat.matmul(bound.get("un.u2_w")) + bound.get("un.u2_b")).relu()
            }
        };
        let logits = h.matmul(bound.get("out.w")) + bound.get("out.b");
        (logits, h)
    }

    /// Full forward pass: encode the window, then denoise.
    pub fn denoise<'t>(
        &self,
        tape: &'t Tape,
        bound: &BoundParams<'t>,
        window: &[f64],
        mask: &[f64],
        a_k: usize,
        k: usize,
        noise: &ForwardNoise,
    ) -> DenoiseVars<'t> {
        let (mu, sigma, z) = self.encode_history(tape, bound, window, mask, noise);
        let (x0_logits, h) = self.denoise_from_z(tape, bound, z, a_k, k, noise);
        DenoiseVars { x0_logits, h, mu, sigma, z }
    }

    /// Eval-mode latent for a window (`z = mu`), cached by rollout code
    /// so the encoder runs once per environment step rather than once
    /// per diffusion step.
    pub fn frozen_context(&self, window: &[f64], mask: &[f64]) -> Vec<f64> {
        let tape = Tape::new();
        let bound = self.params.bind(&tape);
        let (mu, _, _) = self.encode_history(&tape, &bound, window, mask, &ForwardNoise::eval());
        mu.value()
    }

    /// Eval-mode logits for one (corrupted action, step) pair given a
    /// cached latent.
    pub fn logits_from_context(&self, z: &[f64], a_k: usize, k: usize) -> Vec<f64> {
        let tape = Tape::new();
        let bound = self.params.bind(&tape);
        let zv = tape.constant(z);
        let (logits, _) = self.denoise_from_z(&tape, &bound, zv, a_k, k, &ForwardNoise::eval());
        logits.value()
    }
}

fn sinusoid(k: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    let half = dim / 2;
    for i in 0..half {
        let freq = 1.0 / 10_000f64.powf(2.0 * i as f64 / dim as f64);
        out[2 * i] = (k as f64 * freq).sin();
        out[2 * i + 1] = (k as f64 * freq).cos();
    }
    if dim % 2 == 1 {
        out[dim - 1] = (k as f64).sin();
    }
    out
}

fn init_encoder(p: &mut ParamStore, d: &ModelDims, rng: &mut ChaCha8Rng) {
    let input = d.window * d.state_bits;
    p.insert("enc.w1", init_matrix(rng, input, d.enc_hidden, 1.0));
    p.insert("enc.b1", zero_vector(d.enc_hidden));
    p.insert("enc.w2", init_matrix(rng, d.enc_hidden, d.enc_hidden, 1.0));
    p.insert("enc.b2", zero_vector(d.enc_hidden));
    p.insert("enc.mu_w", init_matrix(rng, d.enc_hidden, d.d_z, 1.0));
    p.insert("enc.mu_b", zero_vector(d.d_z));
    p.insert("enc.sig_w", init_matrix(rng, d.enc_hidden, d.d_z, 1.0));
    p.insert("enc.sig_b", zero_vector(d.d_z));
}

fn init_condition(p: &mut ParamStore, d: &ModelDims, rng: &mut ChaCha8Rng) {
    p.insert("cond.z_w", init_matrix(rng, d.d_z, d.d_c, 1.0));
    p.insert("cond.z_b", zero_vector(d.d_c));
    p.insert("cond.k_w", init_matrix(rng, d.d_c, d.d_c, 1.0));
    p.insert("cond.k_b", zero_vector(d.d_c));
}

fn init_action_embed(p: &mut ParamStore, d: &ModelDims, rng: &mut ChaCha8Rng) {
    p.insert("act_embed.table", init_matrix(rng, d.action_count, d.d_a, 1.0));
}

fn init_film_blocks(p: &mut ParamStore, d: &ModelDims, rng: &mut ChaCha8Rng) {
    p.insert("act_proj.w", init_matrix(rng, d.d_a, d.d_h, 1.0));
    p.insert("act_proj.b", zero_vector(d.d_h));
    for block in ["block1", "block2"] {
        p.insert(format!("{block}.ln_gain"), Tensor::vector(vec![1.0; d.d_h]));
        p.insert(format!("{block}.ln_bias"), zero_vector(d.d_h));
        p.insert(format!("{block}.film_w1"), init_matrix(rng, d.d_c, d.film_hidden, 1.0));
        p.insert(format!("{block}.film_b1"), zero_vector(d.film_hidden));
        // Identity initialization: zero weights plus a bias preset of
        // gamma = 1, beta = 0, so modulation starts as a no-op.
        p.insert(format!("{block}.film_w2"), Tensor::matrix(d.film_hidden, 4 * d.d_h, vec![0.0; d.film_hidden * 4 * d.d_h]));
        let mut preset = vec![0.0; 4 * d.d_h];
        for i in 0..d.d_h {
            preset[i] = 1.0; // gamma1
            preset[2 * d.d_h + i] = 1.0; // gamma2
        }
        p.insert(format!("{block}.film_b2"), Tensor::vector(preset));
        p.insert(format!("{block}.mlp_w1"), init_matrix(rng, d.d_h, d.d_h, 1.0));
        p.insert(format!("{block}.mlp_b1"), zero_vector(d.d_h));
        p.insert(format!("{block}.mlp_w2"), init_matrix(rng, d.d_h, d.d_h, 1.0));
        p.insert(format!("{block}.mlp_b2"), zero_vector(d.d_h));
    }
}

fn init_mlp_variant(p: &mut ParamStore, d: &ModelDims, rng: &mut ChaCha8Rng) {
    let input = d.d_a + d.d_c;
    p.insert("var.w1", init_matrix(rng, input, d.d_h, 1.0));
    p.insert("var.b1", zero_vector(d.d_h));
    p.insert("var.w2", init_matrix(rng, d.d_h, d.d_h, 1.0));
    p.insert("var.b2", zero_vector(d.d_h));
}

fn init_unet_variant(p: &mut ParamStore, d: &ModelDims, rng: &mut ChaCha8Rng) {
    let input = d.d_a + d.d_c;
    let w1 = (d.d_h / 2).max(2);
    let w2 = (d.d_h / 4).max(2);
    p.insert("un.d1_w", init_matrix(rng, input, w1, 1.0));
    p.insert("un.d1_b", zero_vector(w1));
    p.insert("un.d2_w", init_matrix(rng, w1, w2, 1.0));
    p.insert("un.d2_b", zero_vector(w2));
    p.insert("un.u1_w", init_matrix(rng, w2, w1, 1.0));
    p.insert("un.u1_b", zero_vector(w1));
    p.insert("un.u2_w", init_matrix(rng, 2 * w1, d.d_h, 1.0));
    p.insert("un.u2_b", zero_vector(d.d_h));
}

fn init_guidance(p: &mut ParamStore, d: &ModelDims, rng: &mut ChaCha8Rng) {
    p.insert("guidance.r_w1", init_matrix(rng, d.d_h + d.state_bits, d.head_hidden, 1.0));
    p.insert("guidance.r_b1", zero_vector(d.head_hidden));
    p.insert("guidance.r_w2", init_matrix(rng, d.head_hidden, 1, 1.0));
    p.insert("guidance.r_b2", zero_vector(1));
    p.insert("guidance.g_w1", init_matrix(rng, 1 + d.state_bits, d.head_hidden, 1.0));
    p.insert("guidance.g_b1", zero_vector(d.head_hidden));
    p.insert("guidance.g_w2", init_matrix(rng, d.head_hidden, d.state_bits, 1.0));
    p.insert("guidance.g_b2", zero_vector(d.state_bits));
}
