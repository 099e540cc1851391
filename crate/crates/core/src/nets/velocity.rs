use super::{Activation, Linear, LinearVars, Parameterized, TimeEmbedding};
use crate::autodiff::{Axis, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Anything that can play the role of `v(z, t)` inside a tape.
///
/// `t` holds one time per row of `z`. Implementations must reject times
/// outside `[0, 1]`.
pub trait VelocityModel {
    fn latent_dim(&self) -> usize;
    fn velocity(&self, tape: &mut Tape, z: Var, t: &[f64]) -> Result<Var>;
}

pub(crate) fn check_times(tape: &Tape, z: Var, t: &[f64], latent_dim: usize) -> Result<usize> {
    let shape = tape.shape(z);
    let rows = match shape {
        [b, d] if *d == latent_dim => *b,
        _ => {
            return Err(Error::Shape { op: "velocity", lhs: shape.to_vec(), rhs: vec![t.len(), latent_dim] })
        }
    };
    if t.len() != rows {
        return Err(Error::invalid("velocity", format!("{} times for {rows} rows", t.len())));
    }
    if let Some(bad) = t.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::invalid("velocity", format!("time {bad} outside [0, 1]")));
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq)]
pub struct VelocityFieldConfig {
    pub latent_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub time_embed_dim: usize,
    pub activation: Activation,
}

impl VelocityFieldConfig {
    pub fn new(latent_dim: usize) -> Self {
        VelocityFieldConfig {
            latent_dim,
            hidden_dims: vec![256, 256],
            time_embed_dim: 32,
            activation: Activation::Relu,
        }
    }
}

/// MLP over `[z ⊕ embed(t)]` producing a velocity in the latent space.
/// The output layer starts at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityField {
    config: VelocityFieldConfig,
    time: TimeEmbedding,
    layers: Vec<Linear>,
}

impl VelocityField {
    pub fn new(config: VelocityFieldConfig, rng: &mut SeededRng) -> Self {
        let time = TimeEmbedding::new(config.time_embed_dim);
        let mut widths = vec![config.latent_dim + config.time_embed_dim];
        widths.extend(&config.hidden_dims);
        let mut layers: Vec<Linear> = widths.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect();
        layers.push(Linear::zeros(*widths.last().unwrap(), config.latent_dim));
        VelocityField { config, time, layers }
    }

    pub fn config(&self) -> &VelocityFieldConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Linear] {
        &mut self.layers
    }

    pub fn time_embedding(&self) -> &TimeEmbedding {
        &self.time
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundVelocityField<'_>> {
        let layers = self.layers.iter().map(|l| l.bind(tape, trainable)).collect::<Result<_>>()?;
        Ok(BoundVelocityField { field: self, layers })
    }

    /// Tape-free convenience: velocity at a single time for every row of `z`.
    pub fn eval(&self, z: &Tensor, t: f64) -> Result<Tensor> {
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone())?;
        let rows = z.dims2().map_or(1, |d| d.0);
        let out = self.velocity(&mut tape, zv, &vec![t; rows])?;
        Ok(tape.value(out).clone())
    }
}

impl Parameterized for VelocityField {
    fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            l.push_named(&format!("flow.layer{i}"), &mut out);
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            l.push_mut(&mut out);
        }
        out
    }
}

/// Parameters of a [`VelocityField`] recorded on one tape.
pub struct BoundVelocityField<'a> {
    field: &'a VelocityField,
    layers: Vec<LinearVars>,
}

impl BoundVelocityField<'_> {
    /// Parameter vars in [`Parameterized`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for l in &self.layers {
            l.push_vars(&mut out);
        }
        out
    }
}

impl VelocityModel for BoundVelocityField<'_> {
    fn latent_dim(&self) -> usize {
        self.field.config.latent_dim
    }

    fn velocity(&self, tape: &mut Tape, z: Var, t: &[f64]) -> Result<Var> {
        let rows = check_times(tape, z, t, self.latent_dim())?;
        let te = self.field.time.dim;
        let mut emb = vec![0.0; rows * te];
        for (row, &ti) in emb.chunks_mut(te).zip(t) {
            self.field.time.embed_into(ti, row);
        }
        let emb = tape.constant(Tensor::matrix(rows, te, emb)?)?;
        let mut h = tape.concat(&[z, emb], Axis::Cols)?;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h)?;
            if i < last {
                h = self.field.config.activation.apply(tape, h)?;
            }
        }
        Ok(h)
    }
}

/// Frozen evaluation: parameters enter the tape as constants.
impl VelocityModel for VelocityField {
    fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn velocity(&self, tape: &mut Tape, z: Var, t: &[f64]) -> Result<Var> {
        self.bind(tape, false)?.velocity(tape, z, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(hidden: Vec<usize>, seed: u64) -> VelocityField {
        let mut cfg = VelocityFieldConfig::new(3);
        cfg.hidden_dims = hidden;
        cfg.time_embed_dim = 8;
        VelocityField::new(cfg, &mut SeededRng::new(seed))
    }

    #[test]
    fn zero_output_layer_gives_zero_velocity() {
        let f = field(vec![16, 16], 1);
        let z = SeededRng::new(2).normal_tensor(&[5, 3]);
        for t in [0.0, 0.3, 1.0] {
            assert!(f.eval(&z, t).unwrap().data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn batch_rows_are_independent() {
        let mut f = field(vec![16, 16], 3);
        // give the output layer some weight so the check is not vacuous
        let mut rng = SeededRng::new(9);
        let last = f.layers_mut().last_mut().unwrap();
        *last = Linear::new(16, 3, &mut rng);
        let z = rng.normal_tensor(&[8, 3]);
        let batch = f.eval(&z, 0.4).unwrap();
        for i in 0..8 {
            let single = Tensor::matrix(1, 3, z.row(i).to_vec()).unwrap();
            assert_eq!(f.eval(&single, 0.4).unwrap().data(), batch.row(i));
        }
    }

    #[test]
    fn times_outside_unit_interval_rejected() {
        let f = field(vec![4], 0);
        let z = Tensor::zeros(&[1, 3]);
        assert!(f.eval(&z, 1.5).is_err());
        assert!(f.eval(&z, -0.1).is_err());
    }

    #[test]
    fn hidden_layout_is_configurable() {
        let f = field(vec![128, 128, 128], 0);
        assert_eq!(f.layers().len(), 4);
        assert_eq!(f.layers()[0].fan_in(), 3 + 8);
        assert_eq!(f.layers()[3].fan_out(), 3);
    }
}
