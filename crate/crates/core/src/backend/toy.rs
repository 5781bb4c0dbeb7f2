//! Arithmetic toy networks: a small "same"-padded convolution with ReLU, then
//! either cell-average pooling to an `l x l` grid (DisNet) or per-bin average
//! pooling (extractor). Every intermediate value has a closed form, which is
//! what makes brute-force oracles possible in tests.

use std::path::{Path, PathBuf};

use image::RgbImage;
use ndarray::{Array2, Array3, Array4};

use super::toyfile::{parse_usize_directive, Tensor, ToyFile};
use super::{
    argmax_lowest, gap_class_scores, resize_bilinear, to_planar, ActivationStack, BackendDescriptor,
    BackendKind, ClassifierWeights, DisNet, DisNetOutput, FeatureExtractor, FeatureVector,
    ModelSource,
};
use crate::error::{Error, Result};

/// Convolution bank `weight[f][c][dy][dx]` with odd square kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBank {
    weight: Array4<f64>,
    bias: Vec<f64>,
}

impl ConvBank {
    pub fn new(weight: Array4<f64>, bias: Option<Vec<f64>>) -> Result<Self> {
        let (f, c, kh, kw) = weight.dim();
        if f == 0 || c != 3 || kh != kw || kh % 2 == 0 {
            return Err(Error::ShapeMismatch(format!(
                "conv weight must be [F, 3, k, k] with odd k, got [{f}, {c}, {kh}, {kw}]"
            )));
        }
        let bias = bias.unwrap_or_else(|| vec![0.0; f]);
        if bias.len() != f {
            return Err(Error::ShapeMismatch(format!(
                "conv bias has {} entries for {f} filters",
                bias.len()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn num_filters(&self) -> usize {
        self.weight.dim().0
    }

    /// `relu(bias_f + sum_{c,dy,dx} w[f,c,dy,dx] * x[c, y+dy-r, x+dx-r])`, zero padded.
    pub fn forward(&self, input: &Array3<f64>) -> Array3<f64> {
        let (nf, nc, k, _) = self.weight.dim();
        let (_, h, w) = input.dim();
        let r = (k / 2) as isize;
        let mut out = Array3::<f64>::zeros((nf, h, w));
        for f in 0..nf {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = self.bias[f];
                    for c in 0..nc {
                        for dy in 0..k {
                            let yy = y as isize + dy as isize - r;
                            if yy < 0 || yy >= h as isize {
                                continue;
                            }
                            for dx in 0..k {
                                let xx = x as isize + dx as isize - r;
                                if xx < 0 || xx >= w as isize {
                                    continue;
                                }
                                acc += self.weight[[f, c, dy, dx]]
                                    * input[[c, yy as usize, xx as usize]];
                            }
                        }
                    }
                    out[[f, y, x]] = acc.max(0.0);
                }
            }
        }
        out
    }

    fn from_file(file: &ToyFile, origin: &Path) -> Result<Self> {
        let weight = file
            .tensor("conv.weight")
            .ok_or_else(|| missing_tensor(origin, "conv.weight"))?;
        let weight = to_array4(weight, origin, "conv.weight")?;
        let bias = file.tensor("conv.bias").map(|t| t.values.clone());
        Self::new(weight, bias)
    }

    fn write_into(&self, file: &mut ToyFile) {
        let dims = self.weight.shape().to_vec();
        file.set_tensor(
            "conv.weight",
            Tensor::new(dims, self.weight.iter().copied().collect()),
        );
        file.set_tensor("conv.bias", Tensor::new(vec![self.bias.len()], self.bias.clone()));
    }
}

/// Mean of each `l x l` cell; cell `i` spans `[floor(i*H/l), floor((i+1)*H/l))`.
pub(crate) fn cell_pool(maps: &Array3<f64>, grid: usize) -> Array3<f64> {
    let (n, h, w) = maps.dim();
    let bounds = |i: usize, size: usize| (i * size / grid, (i + 1) * size / grid);
    Array3::from_shape_fn((n, grid, grid), |(f, gy, gx)| {
        let (y0, y1) = bounds(gy, h);
        let (x0, x1) = bounds(gx, w);
        let mut sum = 0.0;
        for y in y0..y1 {
            for x in x0..x1 {
                sum += maps[[f, y, x]];
            }
        }
        sum / ((y1 - y0) * (x1 - x0)) as f64
    })
}

fn missing_tensor(origin: &Path, name: &str) -> Error {
    Error::Parse {
        path: origin.to_path_buf(),
        line: 0,
        message: format!("missing tensor `{name}`"),
    }
}

fn to_array4(t: &Tensor, origin: &Path, name: &str) -> Result<Array4<f64>> {
    match t.dims[..] {
        [a, b, c, d] => Ok(Array4::from_shape_vec((a, b, c, d), t.values.clone())
            .expect("toyfile guarantees value count")),
        _ => Err(Error::Parse {
            path: origin.to_path_buf(),
            line: 0,
            message: format!("`{name}` must have rank 4, has rank {}", t.rank()),
        }),
    }
}

fn to_array2(t: &Tensor, origin: &Path, name: &str) -> Result<Array2<f64>> {
    match t.dims[..] {
        [a, b] => Ok(Array2::from_shape_vec((a, b), t.values.clone())
            .expect("toyfile guarantees value count")),
        _ => Err(Error::Parse {
            path: origin.to_path_buf(),
            line: 0,
            message: format!("`{name}` must have rank 2, has rank {}", t.rank()),
        }),
    }
}

fn check_kind(file: &ToyFile, origin: &Path, want: BackendKind) -> Result<()> {
    let kind = file
        .directive("kind")
        .and_then(|v| v.first())
        .ok_or_else(|| Error::Parse {
            path: origin.to_path_buf(),
            line: 0,
            message: "missing directive @kind".into(),
        })?;
    let kind: BackendKind = kind.parse()?;
    if kind != want {
        return Err(Error::Config(format!(
            "{} declares @kind {kind}, expected {want}",
            origin.display()
        )));
    }
    Ok(())
}

fn read_resolution(file: &ToyFile, origin: &Path) -> Result<(u32, u32)> {
    match parse_usize_directive(file, "resolution", &origin.to_path_buf())?[..] {
        [w, h] if w > 0 && h > 0 => Ok((w as u32, h as u32)),
        _ => Err(Error::Parse {
            path: origin.to_path_buf(),
            line: 0,
            message: "@resolution needs two positive integers: width height".into(),
        }),
    }
}

fn file_id(origin: &Path) -> String {
    origin
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "toy".into())
}

#[derive(Debug)]
pub struct ToyDisNet {
    descriptor: BackendDescriptor,
    conv: ConvBank,
    classifier: ClassifierWeights,
    grid: usize,
}

impl ToyDisNet {
    pub fn new(
        id: impl Into<String>,
        conv: ConvBank,
        classifier: ClassifierWeights,
        input_resolution: (u32, u32),
        grid: usize,
    ) -> Result<Self> {
        if classifier.num_filters() != conv.num_filters() {
            return Err(Error::ShapeMismatch(format!(
                "fc weight has {} columns but conv has {} filters",
                classifier.num_filters(),
                conv.num_filters()
            )));
        }
        let (w, h) = input_resolution;
        if grid == 0 || (w as usize) < grid || (h as usize) < grid {
            return Err(Error::Config(format!(
                "grid {grid} does not fit input resolution {w}x{h}"
            )));
        }
        let descriptor = BackendDescriptor {
            id: id.into(),
            kind: BackendKind::DisNet,
            input_resolution,
            source: ModelSource::Toy(None),
            class_labels: classifier.labels().to_vec(),
            output_dim: grid,
        };
        Ok(Self {
            descriptor,
            conv,
            classifier,
            grid,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = ToyFile::read(path)?;
        let mut net = Self::from_toyfile(&file, path)?;
        net.descriptor.source = ModelSource::Toy(Some(PathBuf::from(path)));
        Ok(net)
    }

    pub fn from_toyfile(file: &ToyFile, origin: &Path) -> Result<Self> {
        check_kind(file, origin, BackendKind::DisNet)?;
        let resolution = read_resolution(file, origin)?;
        let grid = match parse_usize_directive(file, "grid", &origin.to_path_buf())?[..] {
            [l] => l,
            _ => {
                return Err(Error::Parse {
                    path: origin.to_path_buf(),
                    line: 0,
                    message: "@grid needs exactly one integer".into(),
                })
            }
        };
        let conv = ConvBank::from_file(file, origin)?;
        let fc = file.tensor("fc.weight").ok_or_else(|| Error::MissingClassifierWeights {
            path: origin.to_path_buf(),
            message: "no `fc.weight` tensor".into(),
        })?;
        let fc = to_array2(fc, origin, "fc.weight")?;
        let classifier = match file.directive("labels") {
            Some(labels) => ClassifierWeights::new(fc, labels.to_vec())?,
            None => ClassifierWeights::unlabeled(fc)?,
        };
        Self::new(file_id(origin), conv, classifier, resolution, grid)
    }

    pub fn to_toyfile(&self) -> ToyFile {
        let mut file = ToyFile::default();
        file.set_directive("kind", ["disnet"]);
        let (w, h) = self.descriptor.input_resolution;
        file.set_directive("resolution", [w, h]);
        file.set_directive("grid", [self.grid]);
        file.set_directive("labels", self.classifier.labels());
        self.conv.write_into(&mut file);
        let fc = self.classifier.weights();
        file.set_tensor(
            "fc.weight",
            Tensor::new(fc.shape().to_vec(), fc.iter().copied().collect()),
        );
        file
    }

    /// Activation maps for an image already at the input resolution.
    fn activations(&self, image: &RgbImage) -> Result<ActivationStack> {
        let (w, h) = self.descriptor.input_resolution;
        let resized = resize_bilinear(image, w, h)?;
        let responses = self.conv.forward(&to_planar(&resized));
        ActivationStack::new(cell_pool(&responses, self.grid))
    }
}

impl DisNet for ToyDisNet {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn classifier(&self) -> &ClassifierWeights {
        &self.classifier
    }

    fn forward(&self, image: &RgbImage) -> Result<DisNetOutput> {
        let activations = self.activations(image)?;
        let class_scores = gap_class_scores(&activations, &self.classifier)?;
        Ok(DisNetOutput {
            predicted_class: argmax_lowest(&class_scores),
            class_scores,
            activations,
        })
    }
}

/// Spatial bin in fractional coordinates `[x0, y0, x1, y1]` of the resized input.
pub type Bin = [f64; 4];

#[derive(Debug)]
pub struct ToyExtractor {
    descriptor: BackendDescriptor,
    conv: ConvBank,
    bins: Vec<Bin>,
    /// Pixel rectangles `(x0, y0, x1, y1)` of each bin at the input resolution.
    pixel_bins: Vec<(usize, usize, usize, usize)>,
}

impl ToyExtractor {
    pub fn new(
        id: impl Into<String>,
        conv: ConvBank,
        bins: Vec<Bin>,
        input_resolution: (u32, u32),
    ) -> Result<Self> {
        if bins.is_empty() {
            return Err(Error::Config("extractor needs at least one bin".into()));
        }
        let (w, h) = (input_resolution.0 as f64, input_resolution.1 as f64);
        let mut pixel_bins = Vec::with_capacity(bins.len());
        for b in &bins {
            let px = |v: f64, size: f64| (v.clamp(0.0, 1.0) * size).round() as usize;
            let r = (px(b[0], w), px(b[1], h), px(b[2], w), px(b[3], h));
            if r.2 <= r.0 || r.3 <= r.1 {
                return Err(Error::Config(format!("bin {b:?} is empty at {w}x{h}")));
            }
            pixel_bins.push(r);
        }
        let descriptor = BackendDescriptor {
            id: id.into(),
            kind: BackendKind::FeatureExtractor,
            input_resolution,
            source: ModelSource::Toy(None),
            class_labels: Vec::new(),
            output_dim: conv.num_filters() * bins.len(),
        };
        Ok(Self {
            descriptor,
            conv,
            bins,
            pixel_bins,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = ToyFile::read(path)?;
        let mut ex = Self::from_toyfile(&file, path)?;
        ex.descriptor.source = ModelSource::Toy(Some(PathBuf::from(path)));
        Ok(ex)
    }

    pub fn from_toyfile(file: &ToyFile, origin: &Path) -> Result<Self> {
        check_kind(file, origin, BackendKind::FeatureExtractor)?;
        let resolution = read_resolution(file, origin)?;
        let conv = ConvBank::from_file(file, origin)?;
        let bins = file
            .tensor("bins")
            .ok_or_else(|| missing_tensor(origin, "bins"))?;
        let bins = to_array2(bins, origin, "bins")?;
        if bins.ncols() != 4 {
            return Err(Error::Parse {
                path: origin.to_path_buf(),
                line: 0,
                message: "`bins` must be [B, 4]".into(),
            });
        }
        let bins = bins
            .outer_iter()
            .map(|r| [r[0], r[1], r[2], r[3]])
            .collect();
        Self::new(file_id(origin), conv, bins, resolution)
    }

    pub fn to_toyfile(&self) -> ToyFile {
        let mut file = ToyFile::default();
        file.set_directive("kind", ["feature-extractor"]);
        let (w, h) = self.descriptor.input_resolution;
        file.set_directive("resolution", [w, h]);
        self.conv.write_into(&mut file);
        file.set_tensor(
            "bins",
            Tensor::new(
                vec![self.bins.len(), 4],
                self.bins.iter().flat_map(|b| b.iter().copied()).collect(),
            ),
        );
        file
    }

    pub fn bins(&self) -> &[Bin] {
        &self.bins
    }

    /// Pixel rectangles `(x0, y0, x1, y1)` of each bin at the input resolution.
    pub fn pixel_bins(&self) -> &[(usize, usize, usize, usize)] {
        &self.pixel_bins
    }
}

impl FeatureExtractor for ToyExtractor {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn extract(&self, region: &RgbImage) -> Result<FeatureVector> {
        let (w, h) = self.descriptor.input_resolution;
        let resized = resize_bilinear(region, w, h)?;
        let responses = self.conv.forward(&to_planar(&resized));
        let mut values = Vec::with_capacity(self.descriptor.output_dim);
        for f in 0..self.conv.num_filters() {
            for &(x0, y0, x1, y1) in &self.pixel_bins {
                let mut sum = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        sum += responses[[f, y, x]];
                    }
                }
                values.push((sum / ((x1 - x0) * (y1 - y0)) as f64) as f32);
            }
        }
        Ok(FeatureVector::new(values, self.descriptor.id.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use ndarray::array;

    fn mean_of_channels() -> ConvBank {
        ConvBank::new(Array4::from_elem((1, 3, 1, 1), 1.0 / 3.0), None).unwrap()
    }

    fn eight_bins() -> Vec<Bin> {
        // 4 columns x 2 rows covering the central 80% of the input.
        let mut bins = Vec::new();
        for row in 0..2 {
            for col in 0..4 {
                let x0 = 0.1 + 0.2 * col as f64;
                let y0 = 0.1 + 0.4 * row as f64;
                bins.push([x0, y0, x0 + 0.2, y0 + 0.4]);
            }
        }
        bins
    }

    #[test]
    fn conv_matches_hand_evaluation() {
        // Single filter: +1 on the red centre tap, -0.5 on the green left tap.
        let mut w = Array4::zeros((1, 3, 3, 3));
        w[[0, 0, 1, 1]] = 1.0;
        w[[0, 1, 1, 0]] = -0.5;
        let bank = ConvBank::new(w, Some(vec![0.1])).unwrap();
        let mut input = Array3::zeros((3, 2, 2));
        input[[0, 0, 1]] = 0.8;
        input[[1, 0, 0]] = 1.0;
        let out = bank.forward(&input);
        // (0,1): 0.1 + 0.8 - 0.5*1.0 = 0.4 ; (0,0): 0.1 + 0 - 0 = 0.1
        assert!((out[[0, 0, 1]] - 0.4).abs() < 1e-12);
        assert!((out[[0, 0, 0]] - 0.1).abs() < 1e-12);
        assert!((out[[0, 1, 1]] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn conv_rejects_even_kernels() {
        assert!(ConvBank::new(Array4::zeros((1, 3, 2, 2)), None).is_err());
        assert!(ConvBank::new(Array4::zeros((1, 1, 3, 3)), None).is_err());
    }

    #[test]
    fn cell_pool_averages_blocks() {
        let maps = Array3::from_shape_fn((1, 4, 4), |(_, y, x)| (y * 4 + x) as f64);
        let pooled = cell_pool(&maps, 2);
        assert_eq!(pooled.index_axis(ndarray::Axis(0), 0), array![[2.5, 4.5], [10.5, 12.5]]);
    }

    #[test]
    fn uniform_gray_gives_equal_features() {
        let ex = ToyExtractor::new("gray", mean_of_channels(), eight_bins(), (20, 20)).unwrap();
        let img = RgbImage::from_pixel(37, 23, Rgb([128, 128, 128]));
        let v = ex.extract(&img).unwrap();
        assert_eq!(v.dim(), 8);
        let expected = (128.0f64 / 255.0) as f32;
        for x in &v.values {
            assert!((x - expected).abs() < 1e-6, "{x}");
        }
    }

    #[test]
    fn extraction_is_deterministic() {
        let ex = ToyExtractor::new("gray", mean_of_channels(), eight_bins(), (20, 20)).unwrap();
        let img = RgbImage::from_fn(31, 29, |x, y| Rgb([(x * 7) as u8, (y * 5) as u8, 3]));
        let a = ex.extract(&img).unwrap();
        let b = ex.extract(&img).unwrap();
        assert_eq!(
            a.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn pixels_outside_bins_do_not_matter() {
        // Input at native resolution so no resampling mixes pixels.
        let ex = ToyExtractor::new("gray", mean_of_channels(), eight_bins(), (20, 20)).unwrap();
        let covered = |x: u32, y: u32| {
            ex.pixel_bins()
                .iter()
                .any(|&(x0, y0, x1, y1)| (x0..x1).contains(&(x as usize)) && (y0..y1).contains(&(y as usize)))
        };
        let a = RgbImage::from_fn(20, 20, |x, y| Rgb([(x * 9) as u8, (y * 11) as u8, 40]));
        let mut b = a.clone();
        let mut changed = 0;
        for (x, y, p) in b.enumerate_pixels_mut() {
            if !covered(x, y) {
                *p = Rgb([255, 0, 255]);
                changed += 1;
            }
        }
        assert!(changed > 0);
        assert_eq!(ex.extract(&a).unwrap(), ex.extract(&b).unwrap());
    }

    #[test]
    fn zero_area_region_is_rejected() {
        let ex = ToyExtractor::new("gray", mean_of_channels(), eight_bins(), (20, 20)).unwrap();
        assert!(matches!(ex.extract(&RgbImage::new(0, 5)), Err(Error::ZeroArea)));
    }

    #[test]
    fn disnet_zero_image_gives_zero_everything() {
        let conv = ConvBank::new(Array4::from_elem((2, 3, 3, 3), 0.25), None).unwrap();
        let fc = ClassifierWeights::unlabeled(array![[1.0, -1.0], [0.5, 2.0], [3.0, 3.0]]).unwrap();
        let net = ToyDisNet::new("z", conv, fc, (28, 28), 7).unwrap();
        let out = net.forward(&RgbImage::new(28, 28)).unwrap();
        assert!(out.activations.maps().iter().all(|&v| v == 0.0));
        assert_eq!(out.class_scores, vec![0.0; 3]);
        assert_eq!(out.predicted_class, 0);
        assert_eq!(out.activations.grid_size(), 7);
    }

    #[test]
    fn disnet_bright_top_left_peaks_top_left() {
        // One 1x1 filter: mean of channels minus 0.5, rectified.
        let conv = ConvBank::new(Array4::from_elem((1, 3, 1, 1), 1.0 / 3.0), Some(vec![-0.5])).unwrap();
        let fc = ClassifierWeights::unlabeled(array![[1.0]]).unwrap();
        let net = ToyDisNet::new("tl", conv, fc, (28, 28), 7).unwrap();
        let img = RgbImage::from_fn(28, 28, |x, y| {
            if x < 14 && y < 14 {
                Rgb([250, 250, 250])
            } else {
                Rgb([10, 10, 10])
            }
        });
        let maps = net.forward(&img).unwrap().activations;
        let m = maps.maps().index_axis(ndarray::Axis(0), 0);
        let max = m.iter().cloned().fold(f64::MIN, f64::max);
        // Brute force: cells fully inside the bright quadrant are (250/255 - 0.5).
        let bright = 250.0 / 255.0 - 0.5;
        assert!((max - bright).abs() < 1e-12);
        for ((y, x), v) in m.indexed_iter() {
            if y < 3 && x < 3 {
                assert!((v - bright).abs() < 1e-12);
            }
            if y > 3 || x > 3 {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn toyfile_round_trip_preserves_behaviour() {
        let conv = ConvBank::new(Array4::from_shape_fn((2, 3, 3, 3), |(f, c, y, x)| {
            (f + 2 * c + y) as f64 * 0.1 - x as f64 * 0.2
        }), Some(vec![0.0, -0.1]))
        .unwrap();
        let fc = ClassifierWeights::new(array![[1.0, 0.5]], vec!["only".into()]).unwrap();
        let net = ToyDisNet::new("rt", conv, fc, (16, 16), 4).unwrap();
        let again = ToyDisNet::from_toyfile(&net.to_toyfile(), Path::new("rt.adirtoy")).unwrap();
        let img = RgbImage::from_fn(16, 16, |x, y| Rgb([(x * 16) as u8, (y * 16) as u8, 77]));
        assert_eq!(net.forward(&img).unwrap(), again.forward(&img).unwrap());
        assert_eq!(again.descriptor().class_labels, vec!["only".to_string()]);
    }

    #[test]
    fn disnet_without_fc_is_missing_weights() {
        let conv = ConvBank::new(Array4::zeros((1, 3, 1, 1)), None).unwrap();
        let fc = ClassifierWeights::unlabeled(array![[1.0]]).unwrap();
        let net = ToyDisNet::new("x", conv, fc, (8, 8), 4).unwrap();
        let mut file = net.to_toyfile();
        file.tensors.remove("fc.weight");
        let e = ToyDisNet::from_toyfile(&file, Path::new("x")).unwrap_err();
        assert!(matches!(e, Error::MissingClassifierWeights { .. }));
    }
}
