//! Corpus evaluation, R-D curve output and codec timing.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use rayon::prelude::*;

use crate::codec::{decode_image, encode_image, CodecOptions, StageTimes};
use crate::error::{Error, Result};
use crate::image::{read_ppm, Image};
use crate::metrics::{bd_fit_for, bd_rate, fmt_value, ms_ssim, ms_ssim_db, psnr, BdFit, RdPoint};
use crate::transforms::ModelWeights;

/// Quality axis of an R-D curve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QualityMetric {
    Psnr,
    MsSsimDb,
}

impl QualityMetric {
    pub fn tag(self) -> &'static str {
        match self {
            QualityMetric::Psnr => "psnr",
            QualityMetric::MsSsimDb => "msssim_db",
        }
    }

    pub fn from_tag(s: &str) -> Result<Self> {
        match s {
            "psnr" => Ok(QualityMetric::Psnr),
            "msssim_db" | "msssim" => Ok(QualityMetric::MsSsimDb),
            _ => Err(Error::InvalidArgument(format!("unknown quality metric {s:?}"))),
        }
    }

    fn label(self) -> &'static str {
        match self {
            QualityMetric::Psnr => "PSNR",
            QualityMetric::MsSsimDb => "MS-SSIM-dB",
        }
    }
}

/// Figures for one image under one weight set.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRow {
    pub name: String,
    pub bpp: f64,
    pub psnr: f64,
    pub ms_ssim_db: f64,
    pub payload_bits: u64,
    /// Scales actually used by MS-SSIM (fewer than five on small images).
    pub ms_ssim_scales: usize,
}

impl ImageRow {
    pub fn quality(&self, m: QualityMetric) -> f64 {
        match m {
            QualityMetric::Psnr => self.psnr,
            QualityMetric::MsSsimDb => self.ms_ssim_db,
        }
    }

    /// `bpp, 0.2040; PSNR, 32.2063; MS-SSIM-dB, 14.1234`
    pub fn caption(&self) -> String {
        format!(
            "bpp, {}; PSNR, {}; MS-SSIM-dB, {}",
            fmt_value(self.bpp),
            fmt_value(self.psnr),
            fmt_value(self.ms_ssim_db)
        )
    }
}

/// All images under one weight set, plus their average.
#[derive(Clone, Debug, PartialEq)]
pub struct PointReport {
    pub label: String,
    pub lambda: f64,
    pub rows: Vec<ImageRow>,
    pub average: ImageRow,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusReport {
    pub points: Vec<PointReport>,
    /// Images that could not be read.
    pub skipped: usize,
}

/// Reads every `.ppm` in `dir` in name order. Unreadable files are skipped
/// with a warning on stderr and counted.
pub fn read_ppm_dir(dir: &Path) -> Result<(Vec<(String, Image)>, usize)> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")))
        .collect();
    paths.sort();
    let mut images = Vec::new();
    let mut skipped = 0;
    for p in paths {
        match read_ppm(&p) {
            Ok(img) => {
                let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                images.push((name, img));
            }
            Err(e) => {
                eprintln!("warning: skipping {}: {e}", p.display());
                skipped += 1;
            }
        }
    }
    Ok((images, skipped))
}

pub fn evaluate_image(name: &str, img: &Image, w: &ModelWeights) -> Result<ImageRow> {
    let enc = encode_image(img, w, CodecOptions::default())?;
    let ms = ms_ssim(img, &enc.reconstruction)?;
    Ok(ImageRow {
        name: name.to_string(),
        bpp: enc.bitstream.bpp(),
        psnr: psnr(img, &enc.reconstruction)?,
        ms_ssim_db: ms_ssim_db(ms.value),
        payload_bits: enc.bitstream.payload_bits(),
        ms_ssim_scales: ms.scales,
    })
}

fn average(rows: &[ImageRow]) -> ImageRow {
    let n = rows.len() as f64;
    let mean = |f: fn(&ImageRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    ImageRow {
        name: "average".into(),
        bpp: mean(|r| r.bpp),
        psnr: mean(|r| r.psnr),
        ms_ssim_db: mean(|r| r.ms_ssim_db),
        payload_bits: (rows.iter().map(|r| r.payload_bits as f64).sum::<f64>() / n).round() as u64,
        ms_ssim_scales: rows.iter().map(|r| r.ms_ssim_scales).min().unwrap_or(0),
    }
}

/// Evaluates each weight set on every image. Images are coded in parallel;
/// rows keep the input order.
pub fn evaluate_images(weights: &[(String, ModelWeights)], images: &[(String, Image)]) -> Result<Vec<PointReport>> {
    if images.is_empty() {
        return Err(Error::InvalidArgument("no readable images".into()));
    }
    weights
        .iter()
        .map(|(label, w)| {
            let rows: Vec<ImageRow> = images
                .par_iter()
                .map(|(name, img)| evaluate_image(name, img, w))
                .collect::<Result<_>>()?;
            Ok(PointReport {
                label: label.clone(),
                lambda: w.lambda,
                average: average(&rows),
                rows,
            })
        })
        .collect()
}

pub fn evaluate_corpus(weights: &[(String, ModelWeights)], dir: &Path) -> Result<CorpusReport> {
    let (images, skipped) = read_ppm_dir(dir)?;
    Ok(CorpusReport {
        points: evaluate_images(weights, &images)?,
        skipped,
    })
}

impl CorpusReport {
    /// Averaged points sorted by bpp.
    pub fn curve(&self, m: QualityMetric) -> Vec<RdPoint> {
        let mut c: Vec<RdPoint> = self
            .points
            .iter()
            .map(|p| RdPoint {
                bpp: p.average.bpp,
                quality: p.average.quality(m),
            })
            .collect();
        c.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
        c
    }

    pub fn image_count(&self) -> usize {
        self.points.first().map_or(0, |p| p.rows.len())
    }

    /// One caption-style line per image and weight set, then the averages.
    pub fn captions(&self) -> String {
        let mut s = String::new();
        for p in &self.points {
            for r in &p.rows {
                let _ = writeln!(s, "{} {}: {}", p.label, r.name, r.caption());
            }
            let _ = writeln!(s, "{} average ({} images): {}", p.label, p.rows.len(), p.average.caption());
        }
        if self.skipped > 0 {
            let _ = writeln!(s, "skipped {} unreadable images", self.skipped);
        }
        s
    }

    /// Delimiter-separated table with a header row.
    pub fn table(&self, delim: char) -> String {
        let mut s = ["weights", "lambda", "image", "bpp", "payload_bits", "psnr", "msssim_db", "msssim_scales"].join(&delim.to_string());
        s.push('\n');
        for p in &self.points {
            for r in p.rows.iter().chain(std::iter::once(&p.average)) {
                let cells = [
                    p.label.clone(),
                    format!("{}", p.lambda),
                    r.name.clone(),
                    fmt_value(r.bpp),
                    r.payload_bits.to_string(),
                    fmt_value(r.psnr),
                    fmt_value(r.ms_ssim_db),
                    r.ms_ssim_scales.to_string(),
                ];
                s.push_str(&cells.join(&delim.to_string()));
                s.push('\n');
            }
        }
        s
    }

    /// gnuplot data: bpp in column 1, quality in column 2, one point per
    /// weight set sorted by bpp. Values are written at full precision so a
    /// curve read back is bit-identical.
    pub fn gnuplot(&self, m: QualityMetric) -> String {
        let mut s = format!("# metric {}\n# bpp {}\n", m.tag(), m.label());
        for p in self.curve(m) {
            let q = if p.quality.is_finite() { p.quality.to_string() } else { fmt_value(p.quality) };
            let _ = writeln!(s, "{} {q}", p.bpp);
        }
        s
    }
}

/// Parses the gnuplot layout written by [`CorpusReport::gnuplot`] (or any
/// two-column whitespace file with `#` comments).
pub fn parse_curve(text: &str) -> Result<Vec<RdPoint>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let mut it = l.split_whitespace().map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::Format(format!("bad number {v:?} in curve line {l:?}")))
            });
            match (it.next(), it.next()) {
                (Some(b), Some(q)) => Ok(RdPoint { bpp: b?, quality: q? }),
                _ => Err(Error::Format(format!("curve line {l:?} needs two columns"))),
            }
        })
        .collect()
}

/// BD-rate with the fit used for each curve named in the text.
pub fn bd_rate_report(anchor: &[RdPoint], test: &[RdPoint], m: QualityMetric) -> Result<(f64, String)> {
    let v = bd_rate(anchor, test)?;
    let fit = |n: usize| match bd_fit_for(n) {
        BdFit::Pchip => "pchip",
        BdFit::Polynomial => "polynomial",
    };
    let text = format!(
        "bd_rate_{}, {:.4}%; anchor fit, {} ({} points); test fit, {} ({} points)",
        m.tag(),
        v,
        fit(anchor.len()),
        anchor.len(),
        fit(test.len()),
        test.len()
    );
    Ok((v, text))
}

/// Mean per-image stage times for encode and decode.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BenchReport {
    pub images: usize,
    pub repeats: usize,
    pub encode: StageTimes,
    pub decode: StageTimes,
}

fn scale_times(t: &StageTimes, k: f64) -> StageTimes {
    StageTimes {
        transforms: t.transforms.mul_f64(k),
        context: t.context.mul_f64(k),
        coder: t.coder.mul_f64(k),
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

impl BenchReport {
    pub fn to_text(&self, label: &str) -> String {
        let mut s = format!("bench {label}: {} images x {} repeats, mean per image (ms)\n", self.images, self.repeats);
        for (side, t) in [("encode", &self.encode), ("decode", &self.decode)] {
            let _ = writeln!(
                s,
                "{side} transforms={:.3} context={:.3} coder={:.3} total={:.3}",
                ms(t.transforms),
                ms(t.context),
                ms(t.coder),
                ms(t.total())
            );
        }
        s
    }
}

/// Times full encode and decode runs, sequentially so stages do not
/// compete for cores. Every decode is checked against its encode.
pub fn benchmark_codec(w: &ModelWeights, images: &[Image], repeats: usize) -> Result<BenchReport> {
    if images.is_empty() || repeats == 0 {
        return Err(Error::InvalidArgument("benchmark needs at least one image and one repeat".into()));
    }
    let mut rep = BenchReport {
        images: images.len(),
        repeats,
        ..Default::default()
    };
    for _ in 0..repeats {
        for img in images {
            let enc = encode_image(img, w, CodecOptions::default())?;
            let dec = decode_image(&enc.bitstream, w)?;
            if dec.y_hat != enc.y_hat {
                return Err(Error::CorruptStream {
                    position: 0,
                    reason: "benchmark decode disagrees with encode".into(),
                });
            }
            rep.encode.add(&enc.times);
            rep.decode.add(&dec.times);
        }
    }
    let k = 1.0 / (images.len() * repeats) as f64;
    rep.encode = scale_times(&rep.encode, k);
    rep.decode = scale_times(&rep.decode, k);
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::synthetic_image;
    use crate::transforms::Profile;

    fn tiny(lambda: f64, seed: u64) -> ModelWeights {
        ModelWeights::init(Profile::Tiny.arch(), lambda, seed).unwrap()
    }

    #[test]
    fn single_image_average_is_that_image() {
        let imgs = vec![("a.ppm".to_string(), synthetic_image(32, 32, 3))];
        let pts = evaluate_images(&[("w".into(), tiny(0.05, 1))], &imgs).unwrap();
        let p = &pts[0];
        assert_eq!(p.rows.len(), 1);
        assert_eq!(p.average.bpp, p.rows[0].bpp);
        assert_eq!(p.average.psnr, p.rows[0].psnr);
        assert_eq!(p.average.ms_ssim_db, p.rows[0].ms_ssim_db);
    }

    #[test]
    fn bpp_matches_encoder() {
        let img = synthetic_image(40, 24, 5);
        let w = tiny(0.05, 2);
        let row = evaluate_image("x", &img, &w).unwrap();
        let enc = encode_image(&img, &w, CodecOptions::default()).unwrap();
        assert_eq!(row.bpp, enc.bitstream.bpp());
        assert_eq!(row.bpp, enc.bitstream.payload_bits() as f64 / (40.0 * 24.0));
    }

    #[test]
    fn caption_format() {
        let r = ImageRow {
            name: "k".into(),
            bpp: 0.20401,
            psnr: 32.20634,
            ms_ssim_db: f64::INFINITY,
            payload_bits: 1,
            ms_ssim_scales: 3,
        };
        assert_eq!(r.caption(), "bpp, 0.2040; PSNR, 32.2063; MS-SSIM-dB, inf");
    }

    #[test]
    fn corpus_dir_skips_unreadable_and_emits_curves() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..2 {
            crate::image::write_ppm(&dir.path().join(format!("im{i}.ppm")), &synthetic_image(32, 32, i)).unwrap();
        }
        std::fs::write(dir.path().join("bad.ppm"), b"P6\n2 2\n255\n").unwrap();
        std::fs::write(dir.path().join("notes.txt"), b"ignored").unwrap();
        let ws: Vec<_> = (0..3).map(|i| (format!("w{i}"), tiny([0.01, 0.05, 0.2][i], i as u64))).collect();
        let rep = evaluate_corpus(&ws, dir.path()).unwrap();
        assert_eq!(rep.skipped, 1);
        assert_eq!(rep.image_count(), 2);
        let g = rep.gnuplot(QualityMetric::Psnr);
        let curve = parse_curve(&g).unwrap();
        assert_eq!(curve.len(), 3);
        assert!(curve.windows(2).all(|p| p[0].bpp <= p[1].bpp));
        let t = rep.table('\t');
        assert_eq!(t.lines().count(), 1 + 3 * 3);
        assert!(rep.captions().contains("skipped 1"));
    }

    #[test]
    fn bd_report_names_fit() {
        let a: Vec<RdPoint> = (0..4).map(|i| RdPoint { bpp: 0.1 * (0.3 * i as f64).exp(), quality: 25.0 + 2.0 * i as f64 }).collect();
        let b: Vec<RdPoint> = a.iter().map(|p| RdPoint { bpp: p.bpp * 0.9, ..*p }).collect();
        let (v, text) = bd_rate_report(&a, &b[..3], QualityMetric::Psnr).unwrap();
        assert!((v + 10.0).abs() < 0.1);
        assert!(text.contains("anchor fit, pchip") && text.contains("test fit, polynomial"));
    }

    #[test]
    fn bench_reports_all_stages() {
        let rep = benchmark_codec(&tiny(0.05, 0), &[synthetic_image(32, 32, 1)], 1).unwrap();
        assert!(rep.decode.context > Duration::ZERO);
        assert!(rep.encode.total() > Duration::ZERO);
        assert!(rep.to_text("tiny").contains("decode transforms="));
    }
}
