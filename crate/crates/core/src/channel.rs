//! Polarisation channels, bases and source intensities.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Measurement basis. Z carries H/V, X carries D/A.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
}

impl Basis {
    pub const ALL: [Basis; 2] = [Basis::Z, Basis::X];

    pub fn index(self) -> usize {
        match self {
            Basis::Z => 0,
            Basis::X => 1,
        }
    }

    pub fn other(self) -> Basis {
        match self {
            Basis::Z => Basis::X,
            Basis::X => Basis::Z,
        }
    }

    /// Receiver channel that registers `bit` in this basis.
    pub fn channel(self, bit: u8) -> Channel {
        match (self, bit) {
            (Basis::Z, 0) => Channel::H,
            (Basis::Z, _) => Channel::V,
            (Basis::X, 0) => Channel::D,
            (Basis::X, _) => Channel::A,
        }
    }
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Basis::Z => "Z",
            Basis::X => "X",
        })
    }
}

impl FromStr for Basis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "Z" | "z" => Ok(Basis::Z),
            "X" | "x" => Ok(Basis::X),
            _ => Err(Error::Validation(format!("unknown basis `{s}`"))),
        }
    }
}

/// Receiver polarisation channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    H,
    V,
    D,
    A,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::H, Channel::V, Channel::D, Channel::A];

    pub fn index(self) -> usize {
        match self {
            Channel::H => 0,
            Channel::V => 1,
            Channel::D => 2,
            Channel::A => 3,
        }
    }

    pub fn basis(self) -> Basis {
        match self {
            Channel::H | Channel::V => Basis::Z,
            Channel::D | Channel::A => Basis::X,
        }
    }

    /// Bit value in the channel's own basis (H, D → 0; V, A → 1).
    pub fn bit(self) -> u8 {
        match self {
            Channel::H | Channel::D => 0,
            Channel::V | Channel::A => 1,
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::H => "H",
            Channel::V => "V",
            Channel::D => "D",
            Channel::A => "A",
        })
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "H" => Ok(Channel::H),
            "V" => Ok(Channel::V),
            "D" => Ok(Channel::D),
            "A" => Ok(Channel::A),
            _ => Err(Error::Validation(format!("unknown channel `{s}`"))),
        }
    }
}

/// Source intensity class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intensity {
    Signal,
    Decoy,
    Vacuum,
}

impl Intensity {
    pub const ALL: [Intensity; 3] = [Intensity::Signal, Intensity::Decoy, Intensity::Vacuum];

    pub fn index(self) -> usize {
        match self {
            Intensity::Signal => 0,
            Intensity::Decoy => 1,
            Intensity::Vacuum => 2,
        }
    }
}

impl fmt::Display for Intensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Intensity::Signal => "signal",
            Intensity::Decoy => "decoy",
            Intensity::Vacuum => "vacuum",
        })
    }
}

impl FromStr for Intensity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "signal" => Ok(Intensity::Signal),
            "decoy" => Ok(Intensity::Decoy),
            "vacuum" => Ok(Intensity::Vacuum),
            _ => Err(Error::Validation(format!("unknown intensity `{s}`"))),
        }
    }
}

/// One value per receiver channel, serialised as `{"H": .., "V": .., "D": .., "A": ..}`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ChannelMap<T> {
    #[serde(rename = "H")]
    pub h: T,
    #[serde(rename = "V")]
    pub v: T,
    #[serde(rename = "D")]
    pub d: T,
    #[serde(rename = "A")]
    pub a: T,
}

impl<T: Copy> ChannelMap<T> {
    pub fn splat(value: T) -> Self {
        ChannelMap {
            h: value,
            v: value,
            d: value,
            a: value,
        }
    }

    pub fn from_fn(mut f: impl FnMut(Channel) -> T) -> Self {
        ChannelMap {
            h: f(Channel::H),
            v: f(Channel::V),
            d: f(Channel::D),
            a: f(Channel::A),
        }
    }

    pub fn get(&self, channel: Channel) -> T {
        match channel {
            Channel::H => self.h,
            Channel::V => self.v,
            Channel::D => self.d,
            Channel::A => self.a,
        }
    }

    pub fn set(&mut self, channel: Channel, value: T) {
        match channel {
            Channel::H => self.h = value,
            Channel::V => self.v = value,
            Channel::D => self.d = value,
            Channel::A => self.a = value,
        }
    }

    pub fn map<U: Copy>(&self, mut f: impl FnMut(T) -> U) -> ChannelMap<U> {
        ChannelMap::from_fn(|c| f(self.get(c)))
    }

    pub fn iter(&self) -> impl Iterator<Item = (Channel, T)> + '_ {
        Channel::ALL.into_iter().map(move |c| (c, self.get(c)))
    }
}

impl ChannelMap<f64> {
    pub fn sum(&self) -> f64 {
        self.h + self.v + self.d + self.a
    }

    pub fn mean(&self) -> f64 {
        0.25 * self.sum()
    }
}

/// One value per source intensity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IntensityMap<T> {
    pub signal: T,
    pub decoy: T,
    pub vacuum: T,
}

impl<T: Copy> IntensityMap<T> {
    pub fn from_fn(mut f: impl FnMut(Intensity) -> T) -> Self {
        IntensityMap {
            signal: f(Intensity::Signal),
            decoy: f(Intensity::Decoy),
            vacuum: f(Intensity::Vacuum),
        }
    }

    pub fn get(&self, intensity: Intensity) -> T {
        match intensity {
            Intensity::Signal => self.signal,
            Intensity::Decoy => self.decoy,
            Intensity::Vacuum => self.vacuum,
        }
    }

    pub fn get_mut(&mut self, intensity: Intensity) -> &mut T {
        match intensity {
            Intensity::Signal => &mut self.signal,
            Intensity::Decoy => &mut self.decoy,
            Intensity::Vacuum => &mut self.vacuum,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_basis_and_bits_agree() {
        for c in Channel::ALL {
            assert_eq!(c.basis().channel(c.bit()), c);
            assert_eq!(c.to_string().parse::<Channel>().unwrap(), c);
        }
    }

    #[test]
    fn channel_map_serialises_with_channel_names() {
        let m = ChannelMap {
            h: 0.21,
            v: 0.35,
            d: 0.37,
            a: 0.19,
        };
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"{"H":0.21,"V":0.35,"D":0.37,"A":0.19}"#);
        assert!((m.mean() - 0.28).abs() < 1e-15);
    }
}
