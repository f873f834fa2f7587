use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::models::params::{Init, ParamSet};
use crate::tensor::{Real, Tensor};

/// How the encoder halves spatial resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Downsample {
    /// 3x3 convolution with stride 2.
    #[default]
    StrideConv,
    /// 3x3 convolution followed by 2x2 average pooling.
    AvgPool,
}

/// Shape `[channels, height, width]` of the latent feature between encoder
/// and decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Bottleneck {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Bottleneck {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Bottleneck { channels, height, width }
    }

    pub fn capacity(&self) -> usize {
        self.channels * self.height * self.width
    }
}

impl std::fmt::Display for Bottleneck {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

impl TryFrom<String> for Bottleneck {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Bottleneck> for String {
    fn from(b: Bottleneck) -> String {
        b.to_string()
    }
}

impl std::str::FromStr for Bottleneck {
    type Err = Error;

    /// Parses `HxWxC`, e.g. `4x4x32`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<usize> = s
            .split('x')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Config(format!("bottleneck `{s}` is not HxWxC")))?;
        match parts[..] {
            [h, w, c] if h > 0 && w > 0 && c > 0 => Ok(Bottleneck::new(c, h, w)),
            _ => Err(Error::Config(format!("bottleneck `{s}` is not HxWxC"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    /// Image channels (1 or 3).
    pub channels: usize,
    /// Square image side.
    pub image_size: usize,
    pub bottleneck: Bottleneck,
    /// Gaussian noise channels concatenated to the bottleneck.
    pub noise_dim: usize,
    /// Width after the first downsampling; doubles per level up to
    /// `max_width`. The last encoder level always has the bottleneck width.
    pub base_width: usize,
    pub max_width: usize,
    pub downsample: Downsample,
}

impl GeneratorSpec {
    pub fn desk(bottleneck: Bottleneck) -> Self {
        GeneratorSpec {
            channels: 1,
            image_size: 32,
            bottleneck,
            noise_dim: 4,
            base_width: 8,
            max_width: 32,
            downsample: Downsample::StrideConv,
        }
    }

    /// Number of 2x resolution changes between image and bottleneck.
    pub fn levels(&self) -> Result<usize> {
        let b = &self.bottleneck;
        if b.height != b.width {
            return Err(Error::Config(format!("bottleneck {b} must be square")));
        }
        let mut size = self.image_size;
        let mut levels = 0;
        while size > b.height {
            if !size.is_multiple_of(2) {
                break;
            }
            size /= 2;
            levels += 1;
        }
        if size != b.height || self.image_size == 0 {
            return Err(Error::Config(format!(
                "bottleneck {b} is not image size {} halved a whole number of times",
                self.image_size
            )));
        }
        Ok(levels)
    }

    /// Channels of the feature map `level` halvings below full resolution.
    fn width(&self, level: usize) -> usize {
        let levels = self.levels().unwrap_or(0);
        if level >= levels {
            return self.bottleneck.channels;
        }
        (self.base_width << level.saturating_sub(1).min(16)).min(self.max_width)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.base_width == 0 || self.max_width == 0 || self.bottleneck.channels == 0 {
            return Err(Error::Config("generator widths and channels must be positive".into()));
        }
        if self.levels()? == 0 {
            return Err(Error::Config("bottleneck must be smaller than the image".into()));
        }
        Ok(())
    }

    pub fn param_layout(&self) -> Result<Vec<(String, Vec<usize>, Init)>> {
        self.validate()?;
        let levels = self.levels()?;
        let mut layout = Vec::new();
        let mut conv = |name: String, out: usize, inp: usize| {
            layout.push((format!("{name}.w"), vec![out, inp, 3, 3], Init::He { fan_in: inp * 9 }));
            layout.push((format!("{name}.b"), vec![out], Init::Zeros));
        };
        let mut ch = self.channels;
        for level in 1..=levels {
            conv(format!("enc.down{level}"), self.width(level), ch);
            ch = self.width(level);
        }
        ch += self.noise_dim;
        for level in (0..levels).rev() {
            conv(format!("dec.up{}", levels - level), self.width(level), ch);
            ch = self.width(level);
        }
        conv("dec.out".into(), self.channels, ch);
        Ok(layout)
    }
}

/// Encoder-decoder generator `G(x, z)`.
///
/// The encoder is a stack of (convolution, downsampling, ReLU) blocks ending
/// at the bottleneck; Gaussian noise channels are concatenated there. The
/// decoder mirrors it with (nearest upsampling, convolution, ReLU) blocks
/// back to full resolution, then a linear convolution to image channels and
/// tanh.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator<T> {
    pub spec: GeneratorSpec,
    pub params: ParamSet<T>,
}

impl<T: Real> Generator<T> {
    pub fn new(spec: GeneratorSpec, seed: u64) -> Result<Self> {
        let params = ParamSet::init(&spec.param_layout()?, seed);
        Ok(Generator { spec, params })
    }

    /// Shape of the noise tensor for a batch.
    pub fn noise_shape(&self, batch: usize) -> [usize; 4] {
        let b = &self.spec.bottleneck;
        [batch, self.spec.noise_dim, b.height, b.width]
    }

    /// Latent feature `[B, c, h, w]` for `x`.
    pub fn encode(&self, tape: &mut Tape<T>, bound: &[Var], x: Var) -> Result<Var> {
        let s = &self.spec;
        let shape = tape.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != s.channels || shape[2] != s.image_size || shape[3] != s.image_size {
            return Err(Error::shape(
                "generator input",
                &shape,
                &[shape.first().copied().unwrap_or(0), s.channels, s.image_size, s.image_size],
            ));
        }
        let levels = s.levels()?;
        let mut h = x;
        for level in 0..levels {
            let (w, b) = (bound[2 * level], bound[2 * level + 1]);
            h = match s.downsample {
                Downsample::StrideConv => tape.conv2d(h, w, Some(b), 2, 1)?,
                Downsample::AvgPool => {
                    let c = tape.conv2d(h, w, Some(b), 1, 1)?;
                    tape.avgpool2x(c)?
                }
            };
            h = tape.relu(h);
        }
        Ok(h)
    }

    pub fn forward(&self, tape: &mut Tape<T>, bound: &[Var], x: Var, z: Var) -> Result<Var> {
        let s = &self.spec;
        let levels = s.levels()?;
        let batch = tape.shape(x).first().copied().unwrap_or(0);
        let expected = self.noise_shape(batch);
        if tape.shape(z) != expected {
            return Err(Error::shape("generator noise", tape.shape(z), &expected));
        }
        let latent = self.encode(tape, bound, x)?;
        let mut h = if s.noise_dim > 0 { tape.concat_channels(latent, z)? } else { latent };

        let dec = &bound[2 * levels..];
        for l in 0..levels {
            let u = tape.upsample2x(h)?;
            let c = tape.conv2d(u, dec[2 * l], Some(dec[2 * l + 1]), 1, 1)?;
            h = tape.relu(c);
        }
        let out = tape.conv2d(h, dec[2 * levels], Some(dec[2 * levels + 1]), 1, 1)?;
        Ok(tape.tanh(out))
    }

    /// Forward pass without recording gradients.
    pub fn apply(&self, x: &Tensor<T>, z: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let zv = tape.constant(z.clone());
        let y = self.forward(&mut tape, &bound, xv, zv)?;
        Ok(tape.value(y).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::noise::NoiseSource;

    fn tiny(bottleneck: Bottleneck, noise_dim: usize) -> GeneratorSpec {
        GeneratorSpec {
            channels: 1,
            image_size: 8,
            bottleneck,
            noise_dim,
            base_width: 2,
            max_width: 4,
            downsample: Downsample::StrideConv,
        }
    }

    fn image(batch: usize, spec: &GeneratorSpec, phase: f64) -> Tensor<f64> {
        let n = batch * spec.channels * spec.image_size * spec.image_size;
        Tensor::new(
            &[batch, spec.channels, spec.image_size, spec.image_size],
            (0..n).map(|i| ((i as f64) * 0.37 + phase).sin()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn output_shape_matches_input_for_each_bottleneck() {
        for (bn, ds) in [
            (Bottleneck::new(4, 4, 4), Downsample::StrideConv),
            (Bottleneck::new(3, 2, 2), Downsample::AvgPool),
            (Bottleneck::new(2, 1, 1), Downsample::StrideConv),
            (Bottleneck::new(2, 4, 4), Downsample::AvgPool),
        ] {
            let mut spec = tiny(bn, 2);
            spec.downsample = ds;
            let g = Generator::<f64>::new(spec.clone(), 1).unwrap();
            let x = image(3, &spec, 0.0);
            let z = NoiseSource::new(5).sample::<f64>(&g.noise_shape(3));
            let y = g.apply(&x, &z).unwrap();
            assert_eq!(y.shape(), x.shape());
            assert!(y.data().iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn bottleneck_must_divide_image() {
        assert!(GeneratorSpec::desk(Bottleneck::new(8, 3, 3)).validate().is_err());
        assert!(GeneratorSpec::desk(Bottleneck::new(8, 4, 2)).validate().is_err());
        assert!(GeneratorSpec::desk(Bottleneck::new(8, 32, 32)).validate().is_err());
        assert_eq!(GeneratorSpec::desk(Bottleneck::new(8, 2, 2)).levels().unwrap(), 4);
        assert_eq!("4x4x32".parse::<Bottleneck>().unwrap(), Bottleneck::new(32, 4, 4));
        assert!("4x4".parse::<Bottleneck>().is_err());
    }

    #[test]
    fn zero_network_gives_zero_image() {
        let spec = tiny(Bottleneck::new(4, 2, 2), 2);
        let mut g = Generator::<f64>::new(spec.clone(), 3).unwrap();
        for t in g.params.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = image(2, &spec, 0.5);
        let z = NoiseSource::new(1).sample::<f64>(&g.noise_shape(2));
        let y = g.apply(&x, &z).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_noise_is_deterministic_and_different_noise_differs() {
        let spec = tiny(Bottleneck::new(4, 2, 2), 2);
        let g = Generator::<f64>::new(spec.clone(), 11).unwrap();
        let x = image(1, &spec, 0.1);
        let mut noise = NoiseSource::new(2);
        let z1 = noise.sample::<f64>(&g.noise_shape(1));
        let z2 = noise.sample::<f64>(&g.noise_shape(1));
        let a = g.apply(&x, &z1).unwrap();
        let b = g.apply(&x, &z1).unwrap();
        assert_eq!(a, b);
        let c = g.apply(&x, &z2).unwrap();
        assert!(a.data().iter().zip(c.data()).any(|(p, q)| p != q));
    }

    #[test]
    fn wrong_shapes_rejected() {
        let spec = tiny(Bottleneck::new(4, 2, 2), 2);
        let g = Generator::<f64>::new(spec.clone(), 0).unwrap();
        let x = image(1, &spec, 0.0);
        let bad_z = Tensor::zeros(&[1, 3, 2, 2]);
        assert!(g.apply(&x, &bad_z).is_err());
        let bad_x = Tensor::zeros(&[1, 1, 6, 6]);
        let z = Tensor::zeros(&g.noise_shape(1));
        assert!(g.apply(&bad_x, &z).is_err());
    }

    #[test]
    fn layout_is_conv_only() {
        let spec = GeneratorSpec::desk(Bottleneck::new(32, 4, 4));
        let layout = spec.param_layout().unwrap();
        assert!(layout.iter().all(|(_, shape, _)| shape.len() == 4 || shape.len() == 1));
        let names: Vec<_> = layout.iter().map(|(n, _, _)| n.as_str()).collect();
        assert_eq!(names.iter().filter(|n| n.starts_with("enc.")).count(), 2 * 3);
        assert_eq!(names.iter().filter(|n| n.starts_with("dec.")).count(), 2 * 4);
        let latent = layout.iter().find(|(n, _, _)| n == "enc.down3.w").unwrap();
        assert_eq!(latent.1[0], 32);
    }
}
