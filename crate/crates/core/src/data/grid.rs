use std::collections::HashSet;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io_util;
use crate::tensor::Tensor;

pub const GRID_MAGIC: &[u8; 8] = b"KAIGRID1";
pub const GRID_FORMAT_VERSION: u32 = 1;
const DTYPE: &str = "f32";
const LAYOUT: &str = "row-major C,H,W";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelInfo {
    pub name: String,
    pub units: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level_hpa: Option<u32>,
    /// Time-invariant field (e.g. orography); overwritten with truth during rollout.
    #[serde(default, rename = "static")]
    pub is_static: bool,
}

impl ChannelInfo {
    pub fn new(name: impl Into<String>, units: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            units: units.into(),
            level_hpa: None,
            is_static: false,
        }
    }

    /// The 67-channel ERA5 layout: U, V, T, Q, Z on 12 pressure levels, six
    /// single-level fields, and static orography.
    pub fn era5_table() -> Vec<ChannelInfo> {
        const LEVELS: [u32; 12] = [1000, 925, 850, 800, 700, 600, 500, 400, 300, 200, 100, 50];
        let mut out = Vec::with_capacity(67);
        for (var, units) in [
            ("u", "m/s"),
            ("v", "m/s"),
            ("t", "K"),
            ("q", "kg/kg"),
            ("z", "m2/s2"),
        ] {
            for level in LEVELS {
                out.push(ChannelInfo {
                    name: format!("{var}{level}"),
                    units: units.into(),
                    level_hpa: Some(level),
                    is_static: false,
                });
            }
        }
        for (name, units) in [
            ("t2m", "K"),
            ("msl", "Pa"),
            ("sp", "Pa"),
            ("tcwv", "kg/m2"),
            ("skt", "K"),
            ("tisr", "J/m2"),
        ] {
            out.push(ChannelInfo::new(name, units));
        }
        out.push(ChannelInfo {
            is_static: true,
            ..ChannelInfo::new("orography", "m")
        });
        out
    }
}

/// Cell-centre latitudes (degrees north, north to south) and longitudes (degrees east).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatLonGrid {
    pub lat: Vec<f64>,
    pub lon: Vec<f64>,
}

impl LatLonGrid {
    /// Regular grid with latitude centres at `90 - dlat * (i + 0.5)` and
    /// longitudes at `dlon * j`; 72 x 144 gives the 2.5 degree grid.
    pub fn regular(height: usize, width: usize) -> Self {
        let dlat = 180.0 / height as f64;
        let dlon = 360.0 / width as f64;
        Self {
            lat: (0..height)
                .map(|i| 90.0 - dlat * (i as f64 + 0.5))
                .collect(),
            lon: (0..width).map(|j| dlon * j as f64).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.lat.len()
    }

    pub fn width(&self) -> usize {
        self.lon.len()
    }
}

/// One daily multi-channel state in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub data: Tensor<f32>,
    pub date: NaiveDate,
    pub channels: Vec<ChannelInfo>,
    pub grid: LatLonGrid,
}

impl GridField {
    pub fn new(
        data: Tensor<f32>,
        date: NaiveDate,
        channels: Vec<ChannelInfo>,
        grid: LatLonGrid,
    ) -> Result<Self> {
        let (c, h, w) = data
            .chw("grid_field")
            .map_err(|e| Error::Data(e.to_string()))?;
        if c != channels.len() {
            return Err(Error::Data(format!(
                "field has {c} channels but {} channel descriptors",
                channels.len()
            )));
        }
        if (h, w) != (grid.height(), grid.width()) {
            return Err(Error::Data(format!(
                "field extent {h}x{w} does not match grid {}x{}",
                grid.height(),
                grid.width()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = channels.iter().find(|ch| !seen.insert(ch.name.as_str())) {
            return Err(Error::Data(format!(
                "duplicate channel name `{}`",
                dup.name
            )));
        }
        Ok(Self {
            data,
            date,
            channels,
            grid,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.name == name)
    }

    /// One channel plane as `H * W` values.
    pub fn plane(&self, channel: usize) -> &[f32] {
        let hw = self.height() * self.width();
        &self.data.data()[channel * hw..(channel + 1) * hw]
    }

    /// Same metadata and date, new payload.
    pub fn with_data(&self, data: Tensor<f32>, date: NaiveDate) -> Result<Self> {
        Self::new(data, date, self.channels.clone(), self.grid.clone())
    }

    pub fn roll_lon(&self, k: isize) -> Self {
        Self {
            data: self.data.roll_last(k),
            ..self.clone()
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = GridHeader {
            format_version: GRID_FORMAT_VERSION,
            dims: [self.num_channels(), self.height(), self.width()],
            channels: self.channels.clone(),
            lat: self.grid.lat.clone(),
            lon: self.grid.lon.clone(),
            date: self.date,
            dtype: DTYPE.into(),
            layout: LAYOUT.into(),
        };
        let payload = io_util::f32_to_le_bytes(self.data.data().iter().copied());
        io_util::encode_framed(GRID_MAGIC, &header, &payload)
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let (header, payload): (GridHeader, _) = io_util::decode_framed(path, GRID_MAGIC, bytes)?;
        if header.format_version != GRID_FORMAT_VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: header.format_version,
                supported: GRID_FORMAT_VERSION,
            });
        }
        if header.dtype != DTYPE || header.layout != LAYOUT {
            return Err(Error::Data(format!(
                "{}: unsupported dtype/layout {:?}/{:?}",
                path.display(),
                header.dtype,
                header.layout
            )));
        }
        let [c, h, w] = header.dims;
        if c != header.channels.len() {
            return Err(Error::Data(format!(
                "{}: header declares {c} channels but lists {}",
                path.display(),
                header.channels.len()
            )));
        }
        let expected = c * h * w * 4;
        if payload.len() != expected {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                what: "payload",
                expected,
                actual: payload.len(),
            });
        }
        let data = Tensor::new(vec![c, h, w], io_util::le_bytes_to_f32(&payload))
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let grid = LatLonGrid {
            lat: header.lat,
            lon: header.lon,
        };
        Self::new(data, header.date, header.channels, grid)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GridHeader {
    format_version: u32,
    dims: [usize; 3],
    channels: Vec<ChannelInfo>,
    lat: Vec<f64>,
    lon: Vec<f64>,
    date: NaiveDate,
    dtype: String,
    layout: String,
}

pub fn write_grid(path: &Path, field: &GridField) -> Result<()> {
    io_util::write_atomic(path, &field.to_bytes()?)
}

pub fn read_grid(path: &Path) -> Result<GridField> {
    GridField::from_bytes(path, &io_util::read_file(path)?)
}
