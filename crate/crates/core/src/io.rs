//! Profile CSV files: header `frequency_hz,re,im`, one row per frequency,
//! numbers written in shortest round-trip form.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fiber::FrequencyProfile;

pub const PROFILE_HEADER: [&str; 3] = ["frequency_hz", "re", "im"];

pub fn write_profile<W: Write>(profile: &FrequencyProfile, w: W) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    writer.write_record(PROFILE_HEADER)?;
    for (f, s) in profile.frequencies.iter().zip(&profile.samples) {
        writer.write_record([f.to_string(), s.re.to_string(), s.im.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn profile_to_string(profile: &FrequencyProfile) -> String {
    let mut buf = Vec::new();
    write_profile(profile, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is utf-8")
}

pub fn save_profile(profile: &FrequencyProfile, path: &Path) -> Result<()> {
    write_atomic(path, profile_to_string(profile).as_bytes())
}

pub fn read_profile(text: &str, path: &Path) -> Result<FrequencyProfile> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::schema(path, e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != PROFILE_HEADER {
        return Err(Error::schema(path, format!("expected header {}", PROFILE_HEADER.join(","))));
    }
    let mut frequencies = Vec::new();
    let mut samples = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::schema(path, format!("row {}: {e}", row + 1)))?;
        let field = |i: usize| -> Result<f64> {
            record
                .get(i)
                .ok_or_else(|| Error::schema(path, format!("row {}: missing {}", row + 1, PROFILE_HEADER[i])))?
                .parse::<f64>()
                .map_err(|e| Error::schema(path, format!("row {}, {}: {e}", row + 1, PROFILE_HEADER[i])))
        };
        frequencies.push(field(0)?);
        samples.push(Complex64::new(field(1)?, field(2)?));
    }
    FrequencyProfile::new(frequencies, samples).map_err(|e| Error::schema(path, e.to_string()))
}

pub fn load_profile(path: &Path) -> Result<FrequencyProfile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    read_profile(&text, path)
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = PathBuf::from(path);
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{} has no file name", path.display())))?;
    tmp.set_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
