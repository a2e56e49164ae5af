use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use ndarray::Array4;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scoring::Label;

/// Environment variable naming the dataset cache directory.
pub const DATA_DIR_ENV: &str = "LIVEGAN_DATA_DIR";

/// Side length of the model input; smaller images are zero-padded to it.
pub const BENCH_INPUT_SIZE: usize = 32;

/// `$LIVEGAN_DATA_DIR`, else `$HOME/.cache/livegan`.
pub fn data_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
        return PathBuf::from(dir);
    }
    let home = std::env::var_os("HOME")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."));
    home.join(".cache").join("livegan")
}

/// 8-bit images stored sample-major, `height x width x channels` each.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn sample_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.sample_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    /// Selected images as `N x 32 x 32 x 3` in `[-1, 1]`: centered with zero
    /// padding, grayscale replicated to three channels.
    pub fn to_model_input(&self, indices: &[usize]) -> Result<Array4<f32>> {
        let s = BENCH_INPUT_SIZE;
        if self.height > s || self.width > s {
            return Err(Error::Size(format!(
                "{}x{} images exceed the {s}x{s} input",
                self.height, self.width
            )));
        }
        let top = (s - self.height) / 2;
        let left = (s - self.width) / 2;
        let mut out = Array4::from_elem((indices.len(), s, s, 3), -1.0f32);
        for (o, &i) in indices.iter().enumerate() {
            let img = self.image(i);
            for y in 0..self.height {
                for x in 0..self.width {
                    for c in 0..3 {
                        let src = img[(y * self.width + x) * self.channels + c % self.channels];
                        out[[o, top + y, left + x, c]] = src as f32 / 127.5 - 1.0;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// A labeled dataset with its official train/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub train: ImageSet,
    pub test: ImageSet,
}

impl Dataset {
    /// Load `mnist` or `cifar10` from `dir/<name>`.
    pub fn load(name: &str, dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().join(name);
        match name {
            "mnist" => load_mnist(&dir),
            "cifar10" => load_cifar10(&dir),
            other => Err(Error::Config(format!("unknown dataset {other:?} (mnist, cifar10)"))),
        }
    }

    pub fn classes(&self) -> Vec<u8> {
        let mut c: Vec<u8> = self.train.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }
}

fn read_maybe_gz(dir: &Path, stem: &str) -> Result<Vec<u8>> {
    let plain = dir.join(stem);
    let gz = dir.join(format!("{stem}.gz"));
    let mut bytes = Vec::new();
    if plain.is_file() {
        bytes = fs::read(&plain).map_err(|e| Error::io(format!("reading {}", plain.display()), e))?;
    } else if gz.is_file() {
        let f = fs::File::open(&gz).map_err(|e| Error::io(format!("opening {}", gz.display()), e))?;
        GzDecoder::new(f)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(format!("decompressing {}", gz.display()), e))?;
    } else {
        return Err(Error::Data(format!(
            "missing {} (or .gz); place the dataset there or set {DATA_DIR_ENV} \
             (see scripts/fetch_mnist.sh)",
            plain.display()
        )));
    }
    Ok(bytes)
}

fn be_u32(b: &[u8], at: usize) -> usize {
    u32::from_be_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]]) as usize
}

/// Parse an IDX image file (magic 2051) into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(b: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    if b.len() < 16 || be_u32(b, 0) != 2051 {
        return Err(Error::Format("not an IDX image file".into()));
    }
    let (n, rows, cols) = (be_u32(b, 4), be_u32(b, 8), be_u32(b, 12));
    let need = 16 + n * rows * cols;
    if b.len() != need {
        return Err(Error::Format(format!(
            "IDX image file has {} bytes, expected {need}",
            b.len()
        )));
    }
    Ok((n, rows, cols, b[16..].to_vec()))
}

/// Parse an IDX label file (magic 2049).
pub fn parse_idx_labels(b: &[u8]) -> Result<Vec<u8>> {
    if b.len() < 8 || be_u32(b, 0) != 2049 {
        return Err(Error::Format("not an IDX label file".into()));
    }
    let n = be_u32(b, 4);
    if b.len() != 8 + n {
        return Err(Error::Format(format!(
            "IDX label file has {} bytes, expected {}",
            b.len(),
            8 + n
        )));
    }
    Ok(b[8..].to_vec())
}

fn mnist_split(dir: &Path, prefix: &str) -> Result<ImageSet> {
    let (n, rows, cols, pixels) = parse_idx_images(&read_maybe_gz(dir, &format!("{prefix}-images-idx3-ubyte"))?)?;
    let labels = parse_idx_labels(&read_maybe_gz(dir, &format!("{prefix}-labels-idx1-ubyte"))?)?;
    if labels.len() != n {
        return Err(Error::Format(format!("{n} images but {} labels", labels.len())));
    }
    Ok(ImageSet {
        pixels,
        labels,
        height: rows,
        width: cols,
        channels: 1,
    })
}

/// MNIST from the four IDX files (optionally gzipped) in `dir`.
pub fn load_mnist(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    Ok(Dataset {
        name: "mnist".into(),
        train: mnist_split(dir, "train")?,
        test: mnist_split(dir, "t10k")?,
    })
}

/// Parse CIFAR-10 binary records (1 label byte + 3072 planar RGB bytes each).
pub fn parse_cifar_batch(b: &[u8], into: &mut ImageSet) -> Result<()> {
    const REC: usize = 1 + 3 * 32 * 32;
    if !b.len().is_multiple_of(REC) {
        return Err(Error::Format(format!(
            "CIFAR batch length {} is not a multiple of {REC}",
            b.len()
        )));
    }
    for rec in b.chunks(REC) {
        into.labels.push(rec[0]);
        let planes = &rec[1..];
        for p in 0..1024 {
            for c in 0..3 {
                into.pixels.push(planes[c * 1024 + p]);
            }
        }
    }
    Ok(())
}

/// CIFAR-10 from the binary version's `data_batch_{1..5}.bin` and
/// `test_batch.bin`, either directly in `dir` or in `dir/cifar-10-batches-bin`.
pub fn load_cifar10(dir: impl AsRef<Path>) -> Result<Dataset> {
    let mut dir = dir.as_ref().to_path_buf();
    if dir.join("cifar-10-batches-bin").is_dir() {
        dir = dir.join("cifar-10-batches-bin");
    }
    let empty = || ImageSet {
        pixels: Vec::new(),
        labels: Vec::new(),
        height: 32,
        width: 32,
        channels: 3,
    };
    let (mut train, mut test) = (empty(), empty());
    for i in 1..=5 {
        parse_cifar_batch(&read_maybe_gz(&dir, &format!("data_batch_{i}.bin"))?, &mut train)?;
    }
    parse_cifar_batch(&read_maybe_gz(&dir, "test_batch.bin")?, &mut test)?;
    Ok(Dataset {
        name: "cifar10".into(),
        train,
        test,
    })
}

/// One normal class against the rest. Normal test images are labeled live,
/// all others spoof.
#[derive(Debug, Clone, PartialEq)]
pub struct OneClassSplit {
    pub normal_class: u8,
    /// Indices into the dataset's train split, normal class only.
    pub train: Vec<usize>,
    /// Indices into the dataset's test split.
    pub test: Vec<usize>,
    pub test_labels: Vec<Label>,
}

/// Build the split. `max_train` / `max_test` cap the sizes by seeded
/// subsampling (order preserved); the test cap is applied per label so both
/// stay present.
pub fn make_one_class_split(
    dataset: &Dataset,
    normal_class: u8,
    seed: u64,
    max_train: Option<usize>,
    max_test: Option<usize>,
) -> Result<OneClassSplit> {
    let classes = dataset.classes();
    if classes.len() < 2 {
        return Err(Error::Data("dataset needs at least two classes".into()));
    }
    if !classes.contains(&normal_class) {
        return Err(Error::Data(format!(
            "class {normal_class} not in dataset {}",
            dataset.name
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ normal_class as u64);
    let mut cap = |v: Vec<usize>, limit: Option<usize>| -> Vec<usize> {
        match limit {
            Some(k) if k < v.len() => {
                let mut idx = sample(&mut rng, v.len(), k).into_vec();
                idx.sort_unstable();
                idx.into_iter().map(|i| v[i]).collect()
            }
            _ => v,
        }
    };
    let train_all: Vec<usize> = (0..dataset.train.len())
        .filter(|&i| dataset.train.labels[i] == normal_class)
        .collect();
    let train = cap(train_all, max_train);

    let (normal, other): (Vec<usize>, Vec<usize>) =
        (0..dataset.test.len()).partition(|&i| dataset.test.labels[i] == normal_class);
    let frac =
        |n: usize| max_test.map(|m| ((m as f64) * n as f64 / dataset.test.len() as f64).round().max(1.0) as usize);
    let (nf, of) = (frac(normal.len()), frac(other.len()));
    let normal = cap(normal, nf);
    let other = cap(other, of);
    if normal.is_empty() || other.is_empty() {
        return Err(Error::Data(format!("class {normal_class} test split lacks one label")));
    }
    let mut test: Vec<usize> = normal.into_iter().chain(other).collect();
    test.sort_unstable();
    let test_labels = test
        .iter()
        .map(|&i| {
            if dataset.test.labels[i] == normal_class {
                Label::Live
            } else {
                Label::Spoof
            }
        })
        .collect();
    Ok(OneClassSplit {
        normal_class,
        train,
        test,
        test_labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(n: usize, r: usize, c: usize) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [2051u32, n as u32, r as u32, c as u32] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend((0..n * r * c).map(|i| (i % 256) as u8));
        b
    }

    fn toy() -> Dataset {
        let set = |labels: Vec<u8>| ImageSet {
            pixels: (0..labels.len() * 4).map(|i| i as u8).collect(),
            labels,
            height: 2,
            width: 2,
            channels: 1,
        };
        Dataset {
            name: "toy".into(),
            train: set(vec![0, 1, 2, 0, 1, 2, 0]),
            test: set(vec![2, 1, 0, 0, 1, 2]),
        }
    }

    #[test]
    fn idx_parsing() {
        let (n, r, c, px) = parse_idx_images(&idx_images(3, 2, 5)).unwrap();
        assert_eq!((n, r, c, px.len()), (3, 2, 5, 30));
        let mut bad = idx_images(3, 2, 5);
        bad.pop();
        assert!(matches!(parse_idx_images(&bad), Err(Error::Format(_))));
        let mut l = vec![0, 0, 8, 1, 0, 0, 0, 2];
        l.extend([7, 9]);
        assert_eq!(parse_idx_labels(&l).unwrap(), vec![7, 9]);
    }

    #[test]
    fn gz_and_missing_files() {
        use flate2::write::GzEncoder;
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::fast());
        enc.write_all(b"abc").unwrap();
        fs::write(dir.path().join("x.gz"), enc.finish().unwrap()).unwrap();
        assert_eq!(read_maybe_gz(dir.path(), "x").unwrap(), b"abc");
        let err = read_maybe_gz(dir.path(), "y").unwrap_err().to_string();
        assert!(err.contains(DATA_DIR_ENV), "{err}");
    }

    #[test]
    fn cifar_records_become_interleaved() {
        let mut rec = vec![3u8];
        rec.extend((0..3072).map(|i| (i / 1024) as u8));
        let mut set = ImageSet {
            pixels: vec![],
            labels: vec![],
            height: 32,
            width: 32,
            channels: 3,
        };
        parse_cifar_batch(&rec, &mut set).unwrap();
        assert_eq!(set.labels, vec![3]);
        assert_eq!(&set.image(0)[..6], &[0, 1, 2, 0, 1, 2]);
    }

    #[test]
    fn model_input_pads_and_replicates() {
        let d = toy();
        let x = d.train.to_model_input(&[1]).unwrap();
        assert_eq!(x.shape(), &[1, 32, 32, 3]);
        assert_eq!(x[[0, 0, 0, 0]], -1.0);
        // Pixel (0, 0) of image 1 is value 4, placed at the 15/15 offset.
        let v = 4.0 / 127.5 - 1.0;
        assert_eq!([x[[0, 15, 15, 0]], x[[0, 15, 15, 1]], x[[0, 15, 15, 2]]], [v, v, v]);
    }

    #[test]
    fn split_contract() {
        let d = toy();
        let s = make_one_class_split(&d, 0, 1, None, None).unwrap();
        assert_eq!(s.train, vec![0, 3, 6]);
        assert_eq!(s.test, (0..6).collect::<Vec<_>>());
        assert_eq!(s.test_labels.iter().filter(|l| **l == Label::Live).count(), 2);
        assert_eq!(s, make_one_class_split(&d, 0, 1, None, None).unwrap());
        let capped = make_one_class_split(&d, 0, 1, Some(2), Some(3)).unwrap();
        assert_eq!(capped.train.len(), 2);
        assert!(capped.test_labels.contains(&Label::Live) && capped.test_labels.contains(&Label::Spoof));
        assert!(matches!(
            make_one_class_split(&d, 7, 1, None, None),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn normal_class_definitions_partition_the_classes() {
        let d = toy();
        let mut seen = Vec::new();
        for c in d.classes() {
            let s = make_one_class_split(&d, c, 0, None, None).unwrap();
            assert!(s.train.iter().all(|&i| d.train.labels[i] == c));
            seen.extend(s.train);
        }
        seen.sort_unstable();
        assert_eq!(seen, (0..d.train.len()).collect::<Vec<_>>());
    }
}
