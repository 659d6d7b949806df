//! Seeded weather and power series shaped like the GEFCom2014 solar track.
//!
//! Irradiance follows a diurnal and seasonal clear-sky curve attenuated by an
//! autocorrelated cloud cover; power is a noisy, clipped function of the
//! same two quantities. Useful for tests, benchmarks and demos when the
//! competition files are not at hand.

use std::path::Path;

use chrono::{Datelike, Duration, NaiveDateTime, Timelike};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ingest::{self, ColumnMap, PowerRecord, Variable, WeatherRecord};

/// Hourly radiation increment under a clear sky at solar noon, J/m².
const PEAK_ENERGY: f64 = 3.0e6;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub zone: u32,
    pub start: NaiveDateTime,
    pub hours: usize,
    pub seed: u64,
    /// Emit radiation and precipitation as 24-hour run totals starting at
    /// `run_start_hour`, as in the raw competition files.
    pub accumulated: bool,
    pub run_start_hour: u32,
}

impl SyntheticSpec {
    /// 2013-01-01 00:00 through the end of February 2014.
    pub fn protocol_span(seed: u64) -> Self {
        let start = ingest::parse_timestamp("2013-01-01T00:00").expect("valid literal");
        let end = ingest::parse_timestamp("2014-03-01T00:00").expect("valid literal");
        Self {
            zone: 1,
            start,
            hours: (end - start).num_hours() as usize,
            seed,
            accumulated: false,
            run_start_hour: 1,
        }
    }
}

fn clear_sky(t: &NaiveDateTime) -> f64 {
    let hour = t.hour() as f64;
    let day = t.ordinal() as f64;
    let diurnal = (std::f64::consts::PI * (hour - 6.0) / 12.0).sin().max(0.0);
    let season = 0.65 + 0.35 * (2.0 * std::f64::consts::PI * (day - 172.0) / 365.0).cos();
    diurnal * season
}

pub fn generate(spec: &SyntheticSpec) -> (Vec<WeatherRecord>, Vec<PowerRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut weather = Vec::with_capacity(spec.hours);
    let mut power = Vec::with_capacity(spec.hours);
    let mut cloud: f64 = 0.4;
    let mut totals = [0.0; 12];
    for h in 0..spec.hours {
        let t = spec.start + Duration::hours(h as i64);
        cloud = (0.9 * cloud + 0.1 * rng.random::<f64>() + rng.random_range(-0.08..0.08))
            .clamp(0.0, 1.0);
        let sky = clear_sky(&t);
        let ssrd = PEAK_ENERGY * sky * (1.0 - 0.7 * cloud);
        let mut v = [0.0; 12];
        v[Variable::Tclw.index()] = 0.2 * cloud * rng.random::<f64>();
        v[Variable::Tciw.index()] = 0.05 * cloud * rng.random::<f64>();
        v[Variable::Sp.index()] = 98_000.0 + rng.random_range(-800.0..800.0);
        v[Variable::R.index()] = 45.0 + 40.0 * cloud + rng.random_range(-5.0..5.0);
        v[Variable::Tcc.index()] = cloud;
        v[Variable::U10.index()] = rng.random_range(-6.0..6.0);
        v[Variable::V10.index()] = rng.random_range(-6.0..6.0);
        v[Variable::T2m.index()] = 285.0 + 10.0 * sky + rng.random_range(-2.0..2.0);
        v[Variable::Ssrd.index()] = ssrd;
        v[Variable::Strd.index()] = 1.0e6 + 2.5e5 * cloud + rng.random_range(-5e4..5e4);
        v[Variable::Tsr.index()] = 1.1 * PEAK_ENERGY * sky * (1.0 - 0.5 * cloud);
        v[Variable::Tp.index()] = if cloud > 0.7 {
            rng.random_range(0.0..0.002)
        } else {
            0.0
        };
        if spec.accumulated {
            if t.hour() == spec.run_start_hour {
                totals = [0.0; 12];
            }
            for var in Variable::ACCUMULATED {
                let k = var.index();
                totals[k] += v[k];
                v[k] = totals[k];
            }
        }
        let p = (0.85 * sky * (1.0 - 0.75 * cloud) + rng.random_range(-0.02..0.02)).clamp(0.0, 1.0);
        let p = if sky == 0.0 { 0.0 } else { p };
        weather.push(WeatherRecord {
            zone_id: spec.zone,
            timestamp: t,
            values: v,
        });
        power.push(PowerRecord {
            zone_id: spec.zone,
            timestamp: t,
            power: p,
        });
    }
    (weather, power)
}

/// Writes `weather.csv` and `power.csv` into `dir` in the competition layout.
pub fn write_files(spec: &SyntheticSpec, dir: &Path) -> std::io::Result<()> {
    let (weather, power) = generate(spec);
    std::fs::create_dir_all(dir)?;
    let w = std::fs::File::create(dir.join("weather.csv"))?;
    ingest::write_weather(std::io::BufWriter::new(w), &weather, &ColumnMap::default())
        .map_err(std::io::Error::other)?;
    let p = std::fs::File::create(dir.join("power.csv"))?;
    ingest::write_power(std::io::BufWriter::new(p), &power).map_err(std::io::Error::other)
}
