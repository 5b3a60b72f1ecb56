//! Dataset CSV format: a `# d=..,m=..,n=..,sigma=..,seed=..` line, then one
//! row per sample holding `x_1..x_d,y_1..y_m`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SampleSet;
use crate::error::{Error, Result};
use crate::numerics::Mat;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub d: usize,
    pub m: usize,
    pub n: usize,
    pub noise_sigma: f64,
    pub seed: Option<u64>,
}

impl DatasetHeader {
    pub fn to_line(&self) -> String {
        let seed = self
            .seed
            .map_or_else(|| "none".to_string(), |s| s.to_string());
        format!(
            "# d={},m={},n={},sigma={},seed={}",
            self.d, self.m, self.n, self.noise_sigma, seed
        )
    }

    pub fn parse_line(line: &str) -> Result<DatasetHeader> {
        let body = line
            .trim()
            .strip_prefix('#')
            .ok_or_else(|| Error::Parse("header line must start with '#'".into()))?;
        let (mut d, mut m, mut n, mut sigma, mut seed) = (None, None, None, None, None);
        for field in body.split(',') {
            let (k, v) = field
                .trim()
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad header field '{field}'")))?;
            let bad = |_| Error::Parse(format!("bad value for '{k}': '{v}'"));
            match k.trim() {
                "d" => d = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "m" => m = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "n" => n = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "sigma" => sigma = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?),
                "seed" => {
                    seed = match v.trim() {
                        "none" => None,
                        s => Some(s.parse::<u64>().map_err(|e| bad(e.to_string()))?),
                    }
                }
                other => return Err(Error::Parse(format!("unknown header key '{other}'"))),
            }
        }
        let missing = |k: &str| Error::Parse(format!("header is missing '{k}'"));
        Ok(DatasetHeader {
            d: d.ok_or_else(|| missing("d"))?,
            m: m.ok_or_else(|| missing("m"))?,
            n: n.ok_or_else(|| missing("n"))?,
            noise_sigma: sigma.ok_or_else(|| missing("sigma"))?,
            seed,
        })
    }
}

impl SampleSet {
    pub fn header(&self) -> DatasetHeader {
        DatasetHeader {
            d: self.d(),
            m: self.m(),
            n: self.n(),
            noise_sigma: self.noise_sigma,
            seed: self.seed,
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", self.header().to_line())?;
        let mut cw = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        let mut rec: Vec<String> = Vec::with_capacity(self.d() + self.m());
        for i in 0..self.n() {
            rec.clear();
            rec.extend(self.x(i).iter().chain(self.y(i)).map(|v| v.to_string()));
            cw.write_record(&rec)?;
        }
        cw.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn from_csv_reader<R: BufRead>(mut r: R) -> Result<SampleSet> {
        let mut first = String::new();
        r.read_line(&mut first)?;
        let h = DatasetHeader::parse_line(&first)?;
        let mut cr = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
        let mut xs = Mat::zeros(h.n, h.d);
        let mut ys = Mat::zeros(h.n, h.m);
        let mut count = 0;
        for rec in cr.records() {
            let rec = rec?;
            if rec.len() != h.d + h.m {
                return Err(Error::Parse(format!(
                    "row {} has {} fields, expected {}",
                    count + 1,
                    rec.len(),
                    h.d + h.m
                )));
            }
            if count >= h.n {
                return Err(Error::Parse(format!("more than n = {} rows", h.n)));
            }
            for (k, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad number '{field}'")))?;
                if k < h.d {
                    xs[(count, k)] = v;
                } else {
                    ys[(count, k - h.d)] = v;
                }
            }
            count += 1;
        }
        if count != h.n {
            return Err(Error::Parse(format!(
                "header says n = {} but found {count} rows",
                h.n
            )));
        }
        SampleSet::new(xs, ys, h.noise_sigma, h.seed)
    }
}

pub fn read_csv(path: &Path) -> Result<SampleSet> {
    let f = fs::File::open(path)?;
    SampleSet::from_csv_reader(BufReader::new(f))
}
