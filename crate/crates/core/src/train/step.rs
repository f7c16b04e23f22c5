use super::{TrainingSample, VariantConfig};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::losses::{
    clamp_grad_norm, disc_objective_var, emotion_loss_var, emotion_softmax_var, gen_adv_var, l1_var, sync_loss_var,
    sync_prob_var, total_var, LossBreakdown, COSINE_EPS,
};
use crate::media::{audio_chunks, frames_to_nchw, AudioFeatures, Frame};
use crate::model::{Discriminator, Generator};
use crate::nn::{Adam, AdamConfig};
use crate::scorers::Scorer;

/// Gradient-norm bounds applied to both networks.
pub const GRAD_CLAMP: (f64, f64) = (1e-2, 1e10);

/// Networks, optimizer moments and the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub gen: Generator,
    pub disc: Discriminator,
    pub opt_g: Adam,
    pub opt_d: Adam,
    pub step: u64,
}

impl TrainState {
    pub fn new(gen: Generator, disc: Discriminator, adam: AdamConfig) -> Self {
        let opt_g = Adam::new(adam, &gen.params);
        let opt_d = Adam::new(adam, &disc.params);
        Self {
            gen,
            disc,
            opt_g,
            opt_d,
            step: 0,
        }
    }
}

/// One generator update on the weighted total followed by one discriminator
/// update on `-L_d`. Scorers are only read.
pub fn train_step(
    state: &mut TrainState,
    batch: &[TrainingSample],
    variant: &VariantConfig,
    scorer: &Scorer,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let windows = batch.len();
    let inputs: Vec<&Frame> = batch.iter().flat_map(|s| &s.input).collect();
    let targets: Vec<&Frame> = batch.iter().flat_map(|s| &s.target).collect();
    let audio: Vec<&AudioFeatures> = batch.iter().map(|s| &s.audio).collect();
    let desired = variant.destination.name.class_index();
    let w = variant.weights;

    let tape = Tape::<f32>::new();
    let gp = state.gen.params.bind(&tape, true);
    let dp = state.disc.params.bind(&tape, false);
    let x = tape.constant(frames_to_nchw(&inputs));
    let a = tape.constant(audio_chunks(&audio, state.gen.config.steps_per_frame));
    let fake = state.gen.forward(&gp, x, a)?;
    let real = tape.constant(frames_to_nchw(&targets));

    let l_r = l1_var(fake, real, windows);
    let v = scorer.project_var(scorer.mouth_trajectory_var(fake, windows));
    let s = scorer.project_var(tape.constant(scorer.audio_trajectory(&audio)?));
    let e_s = sync_loss_var(sync_prob_var(v, s, COSINE_EPS));
    let l_g = gen_adv_var(state.disc.forward(&dp, fake, windows)?);
    let l_e = emotion_loss_var(emotion_softmax_var(scorer.logits_var(fake)), desired);
    let total = total_var(l_r, e_s, l_g, l_e, &w);

    let mut b = LossBreakdown {
        l_r: l_r.item() as f64,
        e_s: e_s.item() as f64,
        l_g: l_g.item() as f64,
        l_d: 0.0,
        l_e: l_e.item() as f64,
        l_total: total.item() as f64,
    };
    let fake_frames = fake.value();
    let mut grads = tape.backward(total);
    let mut g = state.gen.params.collect_grads(&gp, &mut grads);
    drop(grads);
    drop(tape);
    if !b.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite loss at step {}: {b:?}; batch {:?}",
            state.step,
            batch.iter().map(|s| (s.actor, s.utterance, s.start)).collect::<Vec<_>>()
        )));
    }
    if clamp_grad_norm(&mut g, GRAD_CLAMP.0, GRAD_CLAMP.1)? > 0.0 {
        state.opt_g.update(&mut state.gen.params, &g);
    }

    let tape = Tape::<f32>::new();
    let dp = state.disc.params.bind(&tape, true);
    let d_real = state.disc.forward(&dp, tape.constant(frames_to_nchw(&targets)), windows)?;
    let d_fake = state.disc.forward(&dp, tape.constant((*fake_frames).clone()), windows)?;
    let l_d = disc_objective_var(d_real, d_fake);
    b.l_d = l_d.item() as f64;
    if !b.l_d.is_finite() {
        return Err(Error::Numerical(format!("non-finite discriminator objective at step {}", state.step)));
    }
    let mut grads = tape.backward(l_d.neg());
    let mut g = state.disc.params.collect_grads(&dp, &mut grads);
    if clamp_grad_norm(&mut g, GRAD_CLAMP.0, GRAD_CLAMP.1)? > 0.0 {
        state.opt_d.update(&mut state.disc.params, &g);
    }
    state.step += 1;
    Ok(b)
}
