use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::pnm::{read_image, write_image, Image};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nn::Label;

pub const LABELS_FILE: &str = "labels.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// Planar `C x H x W` values in `[0, 1]`.
    pub image: Vec<f64>,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub multi_label: bool,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

fn parse_label(field: &str, multi: bool) -> std::result::Result<Label, String> {
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad class id {t:?}"));
    if multi {
        let ids = field
            .split(';')
            .filter(|t| !t.trim().is_empty())
            .map(parse)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Label::multi(ids))
    } else {
        Ok(Label::Single(parse(field)?))
    }
}

pub fn format_label(label: &Label) -> String {
    label.classes().iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";")
}

/// Options for [`load_dataset`].
#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Class count; inferred as `max label + 1` when absent.
    pub classes: Option<usize>,
    /// Multi-label mode; inferred from `;` in any label when absent.
    pub multi_label: Option<bool>,
}

/// Reads `labels.csv` (`id,filename,label`) and every referenced image.
pub fn load_dataset(dir: &Path, options: LoadOptions) -> Result<Dataset> {
    let labels_path = dir.join(LABELS_FILE);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(&labels_path)
        .map_err(|e| csv_error(&labels_path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(&labels_path, e))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("{}: missing column {name:?}", labels_path.display())))
    };
    let (c_id, c_file, c_label) = (column("id")?, column("filename")?, column("label")?);
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(&labels_path, e))?;
        let get = |i: usize| record.get(i).unwrap_or("").to_string();
        rows.push((get(c_id), get(c_file), get(c_label)));
    }
    let multi = options.multi_label.unwrap_or_else(|| rows.iter().any(|r| r.2.contains(';')));
    let mut samples = Vec::with_capacity(rows.len());
    let mut dims: Option<(usize, usize, usize)> = None;
    for (id, file, label) in rows {
        let label = parse_label(&label, multi).map_err(|e| Error::Data(format!("sample {id}: {e}")))?;
        if label.classes().is_empty() {
            return Err(Error::Data(format!("sample {id}: no label")));
        }
        let image = read_image(&dir.join(&file)).map_err(|e| Error::Data(format!("sample {id}: {e}")))?;
        let d = (image.channels, image.height, image.width);
        match dims {
            None => dims = Some(d),
            Some(prev) if prev != d => {
                return Err(Error::Data(format!("sample {id}: image is {d:?}, earlier images are {prev:?}")));
            }
            _ => {}
        }
        samples.push(Sample {
            id,
            image: image.to_planar(),
            label,
        });
    }
    let inferred = samples.iter().flat_map(|s| s.label.classes()).max().map_or(0, |m| m + 1);
    let classes = options.classes.unwrap_or(inferred);
    for s in &samples {
        s.label
            .validate(classes)
            .map_err(|e| Error::Data(format!("sample {}: {e}", s.id)))?;
    }
    let (channels, height, width) = dims.unwrap_or((0, 0, 0));
    Ok(Dataset {
        samples,
        channels,
        height,
        width,
        classes,
        multi_label: multi,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        _ => Error::Data(format!("{}: {e}", path.display())),
    }
}

/// Writes `dataset` as PGM/PPM images plus `labels.csv` into `dir`.
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ext = if dataset.channels == 3 { "ppm" } else { "pgm" };
    let labels_path = dir.join(LABELS_FILE);
    let mut writer = csv::Writer::from_path(&labels_path).map_err(|e| csv_error(&labels_path, e))?;
    writer
        .write_record(["id", "filename", "label"])
        .map_err(|e| csv_error(&labels_path, e))?;
    for s in &dataset.samples {
        let file = format!("{}.{ext}", s.id);
        let img = Image::from_planar(&s.image, dataset.channels, dataset.height, dataset.width)?;
        write_image(&dir.join(&file), &img)?;
        writer
            .write_record([s.id.as_str(), file.as_str(), format_label(&s.label).as_str()])
            .map_err(|e| csv_error(&labels_path, e))?;
    }
    writer.flush().map_err(|e| Error::io(&labels_path, e))
}

/// A mini-batch: NCHW images with their labels and ids.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<Label>,
    pub ids: Vec<String>,
}

/// Mirrors each row of every channel plane.
pub fn flip_horizontal(image: &[f64], width: usize) -> Vec<f64> {
    image.chunks(width).flat_map(|row| row.iter().rev().copied()).collect()
}

/// Splits `dataset` into batches. With a shuffle seed the order is a seeded
/// permutation; with `flip` each sample is mirrored with probability 1/2.
/// `epoch` varies both draws between epochs deterministically.
pub fn batch_iter(dataset: &Dataset, batch_size: usize, shuffle: Option<u64>, epoch: u64, flip: bool) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle.unwrap_or(0));
    rng.set_stream(epoch);
    if shuffle.is_some() {
        order.shuffle(&mut rng);
    }
    let flips: Vec<bool> = order.iter().map(|_| flip && rng.gen_bool(0.5)).collect();
    let (c, h, w) = (dataset.channels, dataset.height, dataset.width);
    order
        .chunks(batch_size)
        .zip(flips.chunks(batch_size))
        .map(|(idx, fl)| {
            let mut data = Vec::with_capacity(idx.len() * c * h * w);
            for (&i, &f) in idx.iter().zip(fl) {
                let img = &dataset.samples[i].image;
                if f {
                    data.extend(flip_horizontal(img, w));
                } else {
                    data.extend_from_slice(img);
                }
            }
            Ok(Batch {
                images: Tensor::new(vec![idx.len(), c, h, w], data)?,
                labels: idx.iter().map(|&i| dataset.samples[i].label.clone()).collect(),
                ids: idx.iter().map(|&i| dataset.samples[i].id.clone()).collect(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        Dataset {
            samples: (0..n)
                .map(|i| Sample {
                    id: format!("s{i}"),
                    image: (0..6).map(|p| ((i * 6 + p) % 256) as f64 / 255.0).collect(),
                    label: Label::Single(i % 3),
                })
                .collect(),
            channels: 1,
            height: 2,
            width: 3,
            classes: 3,
            multi_label: false,
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = toy(5);
        save_dataset(dir.path(), &ds).unwrap();
        let back = load_dataset(dir.path(), LoadOptions::default()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn multi_label_rows_are_detected() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = toy(2);
        ds.multi_label = true;
        ds.samples[0].label = Label::multi(vec![2, 0]);
        ds.samples[1].label = Label::multi(vec![1]);
        save_dataset(dir.path(), &ds).unwrap();
        let csv = fs::read_to_string(dir.path().join(LABELS_FILE)).unwrap();
        assert!(csv.contains("s0,s0.pgm,0;2"));
        let back = load_dataset(dir.path(), LoadOptions::default()).unwrap();
        assert!(back.multi_label);
        assert_eq!(back.samples[0].label, Label::multi(vec![0, 2]));
        let forced = load_dataset(dir.path(), LoadOptions { multi_label: Some(true), ..Default::default() }).unwrap();
        assert_eq!(forced.samples[1].label, Label::Multi(vec![1]));
    }

    #[test]
    fn empty_labels_file_gives_no_batches() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(LABELS_FILE), "id,filename,label\n").unwrap();
        let ds = load_dataset(dir.path(), LoadOptions::default()).unwrap();
        assert!(ds.is_empty());
        assert!(batch_iter(&ds, 4, Some(1), 0, true).unwrap().is_empty());
    }

    #[test]
    fn errors_name_the_sample() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(LABELS_FILE), "id,filename,label\ncat7,missing.pgm,0\n").unwrap();
        let err = load_dataset(dir.path(), LoadOptions::default()).unwrap_err().to_string();
        assert!(err.contains("cat7"), "{err}");

        let ds = toy(3);
        save_dataset(dir.path(), &ds).unwrap();
        let err = load_dataset(dir.path(), LoadOptions { classes: Some(2), ..Default::default() }).unwrap_err();
        assert!(matches!(err, Error::Data(ref m) if m.contains("s2")), "{err}");

        fs::write(dir.path().join("s1.pgm"), b"P5\n3 2\n255\n\x00").unwrap();
        let err = load_dataset(dir.path(), LoadOptions::default()).unwrap_err().to_string();
        assert!(err.contains("s1"), "{err}");
    }

    #[test]
    fn shuffling_is_seeded() {
        let ds = toy(10);
        let ids = |seed, epoch| -> Vec<String> {
            batch_iter(&ds, 3, Some(seed), epoch, false).unwrap().into_iter().flat_map(|b| b.ids).collect()
        };
        assert_eq!(ids(4, 0), ids(4, 0));
        assert_ne!(ids(4, 0), ids(4, 1));
        let plain: Vec<String> = batch_iter(&ds, 3, None, 0, false).unwrap().into_iter().flat_map(|b| b.ids).collect();
        assert_eq!(plain, (0..10).map(|i| format!("s{i}")).collect::<Vec<_>>());
        let sizes: Vec<usize> = batch_iter(&ds, 3, Some(1), 0, false).unwrap().iter().map(|b| b.images.shape()[0]).collect();
        assert_eq!(sizes, vec![3, 3, 3, 1]);
    }

    #[test]
    fn flip_is_an_involution() {
        let img: Vec<f64> = (0..12).map(|v| v as f64).collect();
        assert_eq!(flip_horizontal(&img, 4)[..4], [3.0, 2.0, 1.0, 0.0]);
        assert_eq!(flip_horizontal(&flip_horizontal(&img, 4), 4), img);
    }
}
