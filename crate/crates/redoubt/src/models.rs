//! The three networks: attacker autoencoder (noise-conditioned generator),
//! defender autoencoder, classifier head over defender features.
//!
//! Encoders are three 3x3 stride-2 convolutions (28 → 14 → 7 → 4 spatial)
//! followed by a dense layer to the feature vector, which deliberately has
//! no activation. Generators mirror the encoder with transposed
//! convolutions and end in (1+tanh)/2 so outputs live strictly inside
//! (0,1). The attacker concatenates a uniform noise vector to its features
//! before generating, which lets it move the image without moving the
//! features.

use crate::error::Result;
use crate::nn::{Binding, ParamStore};
use crate::rng::uniform;
use crate::tensor::{conv::conv_out, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const IMAGE_HW: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub channels: [usize; 3],
    pub feature_dim: usize,
    pub noise_dim: usize,
    pub classifier_hidden: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig { channels: [32, 64, 128], feature_dim: 64, noise_dim: 32, classifier_hidden: 64 }
    }
}

impl ArchConfig {
    /// Spatial sizes along the encoder: [28, 14, 7, 4].
    pub fn spatial(&self) -> [usize; 4] {
        let s0 = IMAGE_HW;
        let s1 = conv_out(s0);
        let s2 = conv_out(s1);
        let s3 = conv_out(s2);
        [s0, s1, s2, s3]
    }

    /// Flattened width of the last encoder feature map.
    pub fn bottleneck(&self) -> usize {
        let s = self.spatial();
        self.channels[2] * s[3] * s[3]
    }
}

fn he_uniform(rng: &mut ChaCha8Rng, dims: &[usize], fan_in: usize) -> Tensor {
    let limit = (6.0 / fan_in as f64).sqrt();
    let mut t = uniform(rng, dims);
    for v in t.data_mut() {
        *v = (*v * 2.0 - 1.0) * limit;
    }
    t
}

/// Attacker or defender autoencoder; the only structural difference is the
/// noise vector the attacker feeds its generator.
#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub prefix: &'static str,
    pub arch: ArchConfig,
    pub noise_dim: usize,
}

impl Autoencoder {
    pub fn defender(arch: ArchConfig) -> Autoencoder {
        Autoencoder { prefix: "defender", arch, noise_dim: 0 }
    }

    pub fn attacker(arch: ArchConfig) -> Autoencoder {
        Autoencoder { prefix: "attacker", arch, noise_dim: arch.noise_dim }
    }

    fn name(&self, rest: &str) -> String {
        format!("{}.{rest}", self.prefix)
    }

    /// Inserts freshly initialized parameters, consuming the RNG in a
    /// fixed order.
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let [c1, c2, c3] = self.arch.channels;
        let feat = self.arch.feature_dim;
        let bott = self.arch.bottleneck();
        let zdim = feat + self.noise_dim;
        let convs = [(c1, 1), (c2, c1), (c3, c2)];
        for (i, &(f, c)) in convs.iter().enumerate() {
            store.insert(&self.name(&format!("encoder.conv{}.weight", i + 1)), he_uniform(rng, &[f, c, 3, 3], c * 9));
            store.insert(&self.name(&format!("encoder.conv{}.bias", i + 1)), Tensor::zeros(&[f]));
        }
        store.insert(&self.name("encoder.fc.weight"), he_uniform(rng, &[bott, feat], bott));
        store.insert(&self.name("encoder.fc.bias"), Tensor::zeros(&[feat]));

        store.insert(&self.name("generator.fc.weight"), he_uniform(rng, &[zdim, bott], zdim));
        store.insert(&self.name("generator.fc.bias"), Tensor::zeros(&[bott]));
        let deconvs = [(c3, c2), (c2, c1), (c1, 1)];
        for (i, &(f, c)) in deconvs.iter().enumerate() {
            store.insert(&self.name(&format!("generator.deconv{}.weight", i + 1)), he_uniform(rng, &[f, c, 3, 3], f * 9));
            store.insert(&self.name(&format!("generator.deconv{}.bias", i + 1)), Tensor::zeros(&[c]));
        }
    }

    /// Images [n,1,28,28] → features [n,feature_dim]. No activation on the
    /// feature layer.
    pub fn encode(&self, tape: &mut Tape, bind: &Binding, x: Var) -> Result<Var> {
        let mut h = x;
        for i in 1..=3 {
            let w = bind.var(&self.name(&format!("encoder.conv{i}.weight")))?;
            let b = bind.var(&self.name(&format!("encoder.conv{i}.bias")))?;
            h = tape.conv2d(h, w, b)?;
            h = tape.relu(h);
        }
        let n = tape.value(h).dims()[0];
        let flat = tape.reshape(h, &[n, self.arch.bottleneck()])?;
        let w = bind.var(&self.name("encoder.fc.weight"))?;
        let b = bind.var(&self.name("encoder.fc.bias"))?;
        tape.affine(flat, w, b)
    }

    /// Latent code → images in (0,1), [n,1,28,28].
    pub fn generate(&self, tape: &mut Tape, bind: &Binding, z: Var) -> Result<Var> {
        let [c1, c2, c3] = self.arch.channels;
        let s = self.arch.spatial();
        let w = bind.var(&self.name("generator.fc.weight"))?;
        let b = bind.var(&self.name("generator.fc.bias"))?;
        let mut h = tape.affine(z, w, b)?;
        h = tape.relu(h);
        let n = tape.value(h).dims()[0];
        h = tape.reshape(h, &[n, c3, s[3], s[3]])?;
        let plan = [(1usize, s[2], true), (2, s[1], true), (3, s[0], false)];
        let _ = (c1, c2);
        for &(i, out_hw, rl) in &plan {
            let w = bind.var(&self.name(&format!("generator.deconv{i}.weight")))?;
            let b = bind.var(&self.name(&format!("generator.deconv{i}.bias")))?;
            h = tape.conv2d_transpose(h, w, b, out_hw, out_hw)?;
            if rl {
                h = tape.relu(h);
            }
        }
        Ok(tape.out_act(h))
    }

    /// Full pass. The attacker requires its noise tensor ([n, noise_dim],
    /// drawn by the caller so runs are replayable); the defender takes
    /// none. Returns (features, reconstruction).
    pub fn forward(&self, tape: &mut Tape, bind: &Binding, x: Var, noise: Option<Var>) -> Result<(Var, Var)> {
        let features = self.encode(tape, bind, x)?;
        let z = match (self.noise_dim, noise) {
            (0, None) => features,
            (0, Some(_)) => {
                return Err(crate::error::Error::Engine("defender takes no noise".into()))
            }
            (_, None) => return Err(crate::error::Error::Engine("attacker noise missing".into())),
            (d, Some(nv)) => {
                let nd = tape.value(nv).dims();
                if nd.len() != 2 || nd[1] != d {
                    return Err(crate::error::Error::Shape(format!(
                        "noise must be [n,{d}], got {nd:?}"
                    )));
                }
                tape.concat(features, nv, 1)?
            }
        };
        let recon = self.generate(tape, bind, z)?;
        Ok((features, recon))
    }

    /// Draws the attacker's uniform noise for a batch of n images.
    pub fn draw_noise(&self, rng: &mut ChaCha8Rng, n: usize) -> Tensor {
        uniform(rng, &[n, self.noise_dim])
    }
}

/// Two dense layers over defender features: feature_dim → hidden → 10.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub arch: ArchConfig,
}

impl ClassifierHead {
    pub fn new(arch: ArchConfig) -> ClassifierHead {
        ClassifierHead { arch }
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let (feat, hid) = (self.arch.feature_dim, self.arch.classifier_hidden);
        store.insert("classifier.fc1.weight", he_uniform(rng, &[feat, hid], feat));
        store.insert("classifier.fc1.bias", Tensor::zeros(&[hid]));
        store.insert("classifier.fc2.weight", he_uniform(rng, &[hid, 10], hid));
        store.insert("classifier.fc2.bias", Tensor::zeros(&[10]));
    }

    pub fn forward(&self, tape: &mut Tape, bind: &Binding, features: Var) -> Result<Var> {
        let w1 = bind.var("classifier.fc1.weight")?;
        let b1 = bind.var("classifier.fc1.bias")?;
        let mut h = tape.affine(features, w1, b1)?;
        h = tape.relu(h);
        let w2 = bind.var("classifier.fc2.weight")?;
        let b2 = bind.var("classifier.fc2.bias")?;
        tape.affine(h, w2, b2)
    }
}

/// Fixes the parameter sets the co-training phase is allowed to touch:
/// the attacker trains only its generator, the defender only its encoder.
pub fn freeze_for_phase2(store: &mut ParamStore) -> Result<()> {
    store.freeze_prefix("attacker.encoder.")?;
    store.freeze_prefix("defender.generator.")?;
    Ok(())
}

/// A frozen defender encoder plus classifier head, the thing attacks see:
/// images in, logits out, with gradients w.r.t. the image on demand.
pub struct ClassifierModel<'a> {
    pub store: &'a ParamStore,
    pub defender: Autoencoder,
    pub head: ClassifierHead,
}

impl<'a> ClassifierModel<'a> {
    pub fn new(store: &'a ParamStore, arch: ArchConfig) -> ClassifierModel<'a> {
        ClassifierModel { store, defender: Autoencoder::defender(arch), head: ClassifierHead::new(arch) }
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bind = Binding::bind(&mut tape, self.store, &["defender.encoder.", "classifier."], false);
        let xv = tape.constant(x.clone());
        let feats = self.defender.encode(&mut tape, &bind, xv)?;
        let logits = self.head.forward(&mut tape, &bind, feats)?;
        Ok(tape.value(logits).clone())
    }

    /// Gradient of `loss_of_logits(logits)` w.r.t. the input image(s).
    pub fn input_grad(
        &self,
        x: &Tensor,
        loss_of_logits: &dyn Fn(&mut Tape, Var) -> Result<Var>,
    ) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bind = Binding::bind(&mut tape, self.store, &["defender.encoder.", "classifier."], false);
        let xv = tape.leaf(x.clone());
        let feats = self.defender.encode(&mut tape, &bind, xv)?;
        let logits = self.head.forward(&mut tape, &bind, feats)?;
        let loss = loss_of_logits(&mut tape, logits)?;
        tape.backward(loss)?;
        Ok(tape
            .grad(xv)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(x.dims())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn shapes_flow_through_both_autoencoders() {
        let arch = ArchConfig { channels: [4, 5, 6], feature_dim: 7, noise_dim: 3, classifier_hidden: 8 };
        let mut store = ParamStore::new();
        let mut rng = stream_rng(1, 0);
        let att = Autoencoder::attacker(arch);
        let def = Autoencoder::defender(arch);
        att.init_params(&mut store, &mut rng);
        def.init_params(&mut store, &mut rng);

        let mut tape = Tape::new();
        let bind = Binding::bind(&mut tape, &store, &["attacker.", "defender."], true);
        let x = tape.constant(Tensor::filled(&[2, 1, 28, 28], 0.3));
        let noise = tape.constant(att.draw_noise(&mut rng, 2));
        let (f, adv) = att.forward(&mut tape, &bind, x, Some(noise)).unwrap();
        assert_eq!(tape.value(f).dims(), &[2, 7]);
        assert_eq!(tape.value(adv).dims(), &[2, 1, 28, 28]);
        let (df, recon) = def.forward(&mut tape, &bind, adv, None).unwrap();
        assert_eq!(tape.value(df).dims(), &[2, 7]);
        assert_eq!(tape.value(recon).dims(), &[2, 1, 28, 28]);
        for &v in tape.value(recon).data() {
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn feature_layer_is_affine_in_fc_weights() {
        let arch = ArchConfig { channels: [2, 3, 4], feature_dim: 5, noise_dim: 0, classifier_hidden: 4 };
        let mut store = ParamStore::new();
        let mut rng = stream_rng(2, 0);
        let def = Autoencoder::defender(arch);
        def.init_params(&mut store, &mut rng);
        store.get_mut("defender.encoder.fc.bias").unwrap().value = Tensor::zeros(&[5]);

        let x = Tensor::filled(&[1, 1, 28, 28], 0.5);
        let feats = |st: &ParamStore| -> Vec<f64> {
            let mut tape = Tape::new();
            let bind = Binding::bind(&mut tape, st, &["defender."], false);
            let xv = tape.constant(x.clone());
            let f = def.encode(&mut tape, &bind, xv).unwrap();
            tape.value(f).data().to_vec()
        };
        let before = feats(&store);
        {
            let w = store.get_mut("defender.encoder.fc.weight").unwrap();
            w.value = w.value.map(|v| 2.0 * v);
        }
        let after = feats(&store);
        for (a, b) in before.iter().zip(&after) {
            assert!((2.0 * a - b).abs() < 1e-9, "doubling fc weights must double features");
        }
    }
}
