//! Columnar text format: one row per `(pixel, step)`.
//!
//! ```text
//! pixel_id,lat,lon,land_class,year,season,p0_0,p0_1,...,p{N-1}_{N-1}
//! ```
//!
//! Floats are written with 9 significant digits. Rows of one pixel must be
//! contiguous and in timeline order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Patch, PixelSeries, Step};
use crate::error::{Error, Result};

const FIXED: [&str; 6] = ["pixel_id", "lat", "lon", "land_class", "year", "season"];

pub fn write_archive(path: impl AsRef<Path>, archive: &[PixelSeries]) -> Result<()> {
    let file = File::create(path)?;
    let mut out = BufWriter::new(file);
    write_archive_to(&mut out, archive)?;
    out.flush()?;
    Ok(())
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<Vec<PixelSeries>> {
    read_archive_from(BufReader::new(File::open(path)?))
}

fn fmt_float(v: f64) -> String {
    format!("{v:.8e}")
}

pub fn write_archive_to<W: Write>(out: W, archive: &[PixelSeries]) -> Result<()> {
    let size = archive.iter().find_map(PixelSeries::patch_size).unwrap_or(1);
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = FIXED.iter().map(|s| s.to_string()).collect();
    for r in 0..size {
        for c in 0..size {
            header.push(format!("p{r}_{c}"));
        }
    }
    w.write_record(&header).map_err(csv_io)?;
    let mut record = Vec::with_capacity(header.len());
    for px in archive {
        for step in &px.steps {
            if step.patch.size() != size {
                return Err(Error::Format(format!(
                    "pixel {} has patch size {}, archive uses {size}",
                    px.pixel_id,
                    step.patch.size()
                )));
            }
            record.clear();
            record.push(px.pixel_id.to_string());
            record.push(fmt_float(px.lat));
            record.push(fmt_float(px.lon));
            record.push(px.land_class.to_string());
            record.push(step.year.to_string());
            record.push(step.season.as_str().to_string());
            record.extend(step.patch.values().iter().map(|&v| fmt_float(v)));
            w.write_record(&record).map_err(csv_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

pub fn read_archive_from<R: Read>(input: R) -> Result<Vec<PixelSeries>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut records = reader.records();
    let header = match records.next() {
        Some(h) => h.map_err(|e| parse_err(1, e.to_string()))?,
        None => return Err(Error::Format("missing header row".into())),
    };
    if header.len() < FIXED.len() + 1 || header.iter().take(6).ne(FIXED.iter().copied()) {
        return Err(Error::Format(format!(
            "header must start with {} followed by patch columns",
            FIXED.join(",")
        )));
    }
    let cells = header.len() - FIXED.len();
    let size = (cells as f64).sqrt().round() as usize;
    if size * size != cells || size % 2 == 0 {
        return Err(Error::Format(format!("{cells} patch columns do not form an odd square")));
    }

    let mut archive: Vec<PixelSeries> = Vec::new();
    for (i, rec) in records.enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        if rec.len() != header.len() {
            return Err(Error::Format(format!(
                "line {line}: {} columns, header declares {} (inconsistent patch size)",
                rec.len(),
                header.len()
            )));
        }
        let field = |k: usize| rec.get(k).expect("length checked");
        let num = |k: usize| -> Result<f64> {
            field(k)
                .parse::<f64>()
                .map_err(|_| parse_err(line, format!("column {}: {:?} is not a number", header.get(k).unwrap_or("?"), field(k))))
        };
        let pixel_id: u64 = field(0)
            .parse()
            .map_err(|_| parse_err(line, format!("bad pixel_id {:?}", field(0))))?;
        let lat = num(1)?;
        let lon = num(2)?;
        let land_class = field(3).parse().map_err(|e| parse_err(line, e))?;
        let year: i32 = field(4)
            .parse()
            .map_err(|_| parse_err(line, format!("bad year {:?}", field(4))))?;
        let season = field(5).parse().map_err(|e| parse_err(line, e))?;
        let values = (FIXED.len()..header.len()).map(num).collect::<Result<Vec<_>>>()?;
        let patch = Patch::new(size, values).map_err(|e| parse_err(line, e.to_string()))?;
        let step = Step { year, season, patch };

        match archive.last_mut() {
            Some(px) if px.pixel_id == pixel_id => {
                if px.lat != lat || px.lon != lon || px.land_class != land_class {
                    return Err(parse_err(line, format!("pixel {pixel_id}: attributes change between rows")));
                }
                let prev = px.steps.last().expect("pixel has a step");
                if prev.composite_index() >= step.composite_index() {
                    return Err(parse_err(line, format!("pixel {pixel_id}: steps out of order")));
                }
                px.steps.push(step);
            }
            _ => {
                if archive.iter().any(|p| p.pixel_id == pixel_id) {
                    return Err(parse_err(line, format!("pixel {pixel_id}: rows are not contiguous")));
                }
                archive.push(PixelSeries {
                    pixel_id,
                    lat,
                    lon,
                    land_class,
                    steps: vec![step],
                });
            }
        }
    }
    for px in &archive {
        px.validate().map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok(archive)
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}
