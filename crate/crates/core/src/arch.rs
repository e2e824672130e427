//! Brace notation for sequential CNN architectures.
//!
//! ```text
//! {C5(S1P0)@20-MP2(S2)}{C5(S1P0)@50-MP2(S2)}{FC500}{FC10}
//! ```
//!
//! Groups in braces hold `-`-separated layer tokens:
//!
//! | token            | layer                                         |
//! |------------------|-----------------------------------------------|
//! | `C5(S1P2)@32`    | conv, kernel 5, stride 1, pad 2, 32 channels  |
//! | `C3(S1)@384`     | conv with pad 0                               |
//! | `MP3(S2)`        | max pool, window 3, stride 2                  |
//! | `AP3(S2)`        | average pool                                  |
//! | `FC500`          | fully connected, 500 outputs                  |
//! | `D0.5`           | dropout with ratio 0.5                        |
//! | `G1(0.8)`        | phrase pooling, 4-neighbourhood, sigma 0.8    |
//! | `G2(1.0)`        | phrase pooling, 8-neighbourhood               |
//! | `GB(0.8)`        | Gaussian blur with the given std              |
//!
//! Braces only group visually; the parsed spec is a flat layer list.
//! Whitespace is ignored and a single trailing `.` is accepted.

use std::fmt;

use crate::error::{Error, Result};
use crate::gnpp::NeighborhoodType;
use crate::layers::{conv_out_dim, pool_out_dim, PoolKind};
use crate::tensor::Shape4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerDesc {
    Conv {
        k: usize,
        stride: usize,
        pad: usize,
        out_channels: usize,
    },
    MaxPool {
        k: usize,
        stride: usize,
    },
    AvgPool {
        k: usize,
        stride: usize,
    },
    Fc {
        out: usize,
    },
    Dropout {
        ratio: f64,
    },
    Gnpp {
        nb_type: NeighborhoodType,
        sigma: f64,
    },
    GaussBlur {
        std: f64,
    },
}

impl LayerDesc {
    pub fn is_pool(&self) -> bool {
        matches!(self, LayerDesc::MaxPool { .. } | LayerDesc::AvgPool { .. })
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, LayerDesc::Conv { .. })
    }

    pub fn pool_kind(&self) -> Option<PoolKind> {
        match self {
            LayerDesc::MaxPool { .. } => Some(PoolKind::Max),
            LayerDesc::AvgPool { .. } => Some(PoolKind::Avg),
            _ => None,
        }
    }

    /// Output shape of this layer for the given input.
    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        let out = match *self {
            LayerDesc::Conv {
                k,
                stride,
                pad,
                out_channels,
            } => conv_out_dim(input.h, k, stride, pad)
                .zip(conv_out_dim(input.w, k, stride, pad))
                .map(|(h, w)| Shape4::new(input.n, out_channels, h, w)),
            LayerDesc::MaxPool { k, stride } | LayerDesc::AvgPool { k, stride } => {
                if k > input.h && k > input.w {
                    None
                } else {
                    pool_out_dim(input.h, k, stride)
                        .zip(pool_out_dim(input.w, k, stride))
                        .map(|(h, w)| Shape4::new(input.n, input.c, h, w))
                }
            }
            LayerDesc::Fc { out } => Some(Shape4::new(input.n, out, 1, 1)),
            LayerDesc::Dropout { .. } | LayerDesc::Gnpp { .. } | LayerDesc::GaussBlur { .. } => Some(input),
        };
        out.ok_or_else(|| Error::param(format!("layer {self} does not fit input {input}")))
    }

    /// Learnable parameter count given the input channel/feature layout.
    pub fn param_count(&self, input: Shape4) -> usize {
        match *self {
            LayerDesc::Conv { k, out_channels, .. } => out_channels * (k * k * input.c) + out_channels,
            LayerDesc::Fc { out } => out * input.sample_len() + out,
            _ => 0,
        }
    }
}

impl fmt::Display for LayerDesc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LayerDesc::Conv {
                k,
                stride,
                pad,
                out_channels,
            } => write!(f, "C{k}(S{stride}P{pad})@{out_channels}"),
            LayerDesc::MaxPool { k, stride } => write!(f, "MP{k}(S{stride})"),
            LayerDesc::AvgPool { k, stride } => write!(f, "AP{k}(S{stride})"),
            LayerDesc::Fc { out } => write!(f, "FC{out}"),
            LayerDesc::Dropout { ratio } => write!(f, "D{ratio}"),
            LayerDesc::Gnpp { nb_type, sigma } => {
                let t = match nb_type {
                    NeighborhoodType::Type1 => 1,
                    NeighborhoodType::Type2 => 2,
                };
                write!(f, "G{t}({sigma})")
            }
            LayerDesc::GaussBlur { std } => write!(f, "GB({std})"),
        }
    }
}

/// A parsed architecture. Equality compares the layer list only.
#[derive(Debug, Clone)]
pub struct ArchSpec {
    pub layers: Vec<LayerDesc>,
    pub source_text: String,
}

impl PartialEq for ArchSpec {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl ArchSpec {
    /// Builds a spec from layers, rendering the source text.
    pub fn from_layers(layers: Vec<LayerDesc>) -> Result<Self> {
        let mut spec = ArchSpec {
            layers,
            source_text: String::new(),
        };
        spec.check_classifier(0)?;
        spec.source_text = spec.render();
        Ok(spec)
    }

    fn check_classifier(&self, offset: usize) -> Result<()> {
        match self.layers.last() {
            None => Err(Error::Parse {
                offset,
                message: "expected at least one layer group".into(),
            }),
            Some(LayerDesc::Fc { .. }) => Ok(()),
            Some(other) => Err(Error::Parse {
                offset,
                message: format!("final layer must be a classifier FC, found {other}"),
            }),
        }
    }

    /// Text form with a new brace group at every conv or FC layer.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let starts_group = i == 0 || matches!(layer, LayerDesc::Conv { .. } | LayerDesc::Fc { .. });
            if starts_group {
                if i > 0 {
                    out.push('}');
                }
                out.push('{');
            } else {
                out.push('-');
            }
            out.push_str(&layer.to_string());
        }
        if !self.layers.is_empty() {
            out.push('}');
        }
        out
    }

    /// Indices of pooling layers, in order.
    pub fn pool_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_pool())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn conv_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_conv())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn classes(&self) -> usize {
        match self.layers.last() {
            Some(LayerDesc::Fc { out }) => *out,
            _ => 0,
        }
    }

    /// Removes any phrase-pooling or blur layers.
    pub fn without_smoothing(&self) -> ArchSpec {
        let layers = self
            .layers
            .iter()
            .filter(|l| !matches!(l, LayerDesc::Gnpp { .. } | LayerDesc::GaussBlur { .. }))
            .copied()
            .collect();
        ArchSpec::from_layers(layers).expect("classifier kept")
    }

    /// Inserts `layer` right before each listed pool (ordinal among pools,
    /// 0-based), replacing a phrase-pooling or blur layer already there.
    pub fn with_before_pools(&self, pool_ordinals: &[usize], layer: LayerDesc) -> Result<ArchSpec> {
        let pools = self.pool_indices();
        for &p in pool_ordinals {
            if p >= pools.len() {
                return Err(Error::IndexOutOfRange {
                    what: "pool",
                    index: p,
                    limit: pools.len(),
                });
            }
        }
        let mut layers = Vec::with_capacity(self.layers.len() + pool_ordinals.len());
        let mut ordinal = 0;
        for l in &self.layers {
            if l.is_pool() {
                if pool_ordinals.contains(&ordinal) {
                    if matches!(
                        layers.last(),
                        Some(LayerDesc::Gnpp { .. } | LayerDesc::GaussBlur { .. })
                    ) {
                        layers.pop();
                    }
                    layers.push(layer);
                }
                ordinal += 1;
            }
            layers.push(*l);
        }
        ArchSpec::from_layers(layers)
    }

    /// Number of learnable parameters for the given input shape.
    pub fn param_count(&self, input: Shape4) -> Result<usize> {
        let shapes = shape_infer(self, input)?;
        let mut prev = input;
        let mut total = 0;
        for (layer, out) in self.layers.iter().zip(shapes) {
            total += layer.param_count(prev);
            prev = out;
        }
        Ok(total)
    }

    /// Checks that every phrase-pooling layer sits immediately before a pool.
    pub fn check_placement(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            if let LayerDesc::Gnpp { .. } = l {
                if !self.layers.get(i + 1).is_some_and(LayerDesc::is_pool) {
                    return Err(Error::Placement {
                        index: i,
                        message: format!("{l} must be followed directly by a pooling layer"),
                    });
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

impl std::str::FromStr for ArchSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_arch(s)
    }
}

/// Convenience wrapper: phrase pooling before the given pools.
pub fn with_gnpp(arch: &ArchSpec, pool_ordinals: &[usize], nb_type: NeighborhoodType, sigma: f64) -> Result<ArchSpec> {
    arch.with_before_pools(pool_ordinals, LayerDesc::Gnpp { nb_type, sigma })
}

pub fn with_blur(arch: &ArchSpec, pool_ordinals: &[usize], std: f64) -> Result<ArchSpec> {
    arch.with_before_pools(pool_ordinals, LayerDesc::GaussBlur { std })
}

/// Output shape of every layer, in order.
pub fn shape_infer(arch: &ArchSpec, input: Shape4) -> Result<Vec<Shape4>> {
    input.validate()?;
    let mut shapes = Vec::with_capacity(arch.layers.len());
    let mut cur = input;
    for (i, layer) in arch.layers.iter().enumerate() {
        cur = layer.output_shape(cur).map_err(|e| match e {
            Error::InvalidParameter(m) => Error::InvalidParameter(format!("layer {i}: {m}")),
            other => other,
        })?;
        shapes.push(cur);
    }
    Ok(shapes)
}

pub fn parse_arch(text: &str) -> Result<ArchSpec> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
    };
    let layers = p.parse()?;
    let spec = ArchSpec {
        layers,
        source_text: text.to_string(),
    };
    spec.check_classifier(text.len())?;
    Ok(spec)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err<T>(&self, at: usize, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            offset: at,
            message: message.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn describe(&mut self) -> String {
        match self.peek() {
            None => "end of input".into(),
            Some(c) => format!("`{}`", c as char),
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            let found = self.describe();
            self.err(self.pos, format!("expected `{}`, found {found}", c as char))
        }
    }

    fn eat_keyword(&mut self, kw: &str) -> bool {
        self.skip_ws();
        if self.src[self.pos..].starts_with(kw.as_bytes()) {
            self.pos += kw.len();
            true
        } else {
            false
        }
    }

    fn integer(&mut self, what: &str) -> Result<usize> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            let found = self.describe();
            return self.err(start, format!("expected {what} (integer), found {found}"));
        }
        let digits = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        digits
            .parse()
            .or_else(|_| self.err(start, format!("malformed {what} `{digits}`")))
    }

    fn positive(&mut self, what: &str) -> Result<usize> {
        let at = self.pos;
        let v = self.integer(what)?;
        if v == 0 {
            return self.err(at, format!("{what} must be positive"));
        }
        Ok(v)
    }

    fn number(&mut self, what: &str) -> Result<f64> {
        self.skip_ws();
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
            p.pos > s
        };
        let int_part = digits(self);
        let mut frac_part = false;
        if self.src.get(self.pos) == Some(&b'.') && self.src.get(self.pos + 1).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
            frac_part = digits(self);
        }
        if !int_part && !frac_part {
            let found = self.describe();
            return self.err(start, format!("expected {what} (number), found {found}"));
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if !digits(self) {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        text.parse()
            .or_else(|_| self.err(start, format!("malformed {what} `{text}`")))
    }

    fn parse(&mut self) -> Result<Vec<LayerDesc>> {
        let mut layers = Vec::new();
        loop {
            match self.peek() {
                None => break,
                Some(b'{') => {
                    let open = self.pos;
                    self.pos += 1;
                    layers.push(self.token()?);
                    loop {
                        match self.peek() {
                            Some(b'-') => {
                                self.pos += 1;
                                layers.push(self.token()?);
                            }
                            Some(b'}') => {
                                self.pos += 1;
                                break;
                            }
                            None => {
                                return self.err(
                                    self.src.len(),
                                    format!("unbalanced braces: group opened at byte {open} is never closed"),
                                )
                            }
                            Some(_) => {
                                let found = self.describe();
                                return self.err(self.pos, format!("expected `-` or `}}`, found {found}"));
                            }
                        }
                    }
                }
                Some(b'.') => {
                    self.pos += 1;
                    if self.peek().is_some() {
                        let found = self.describe();
                        return self.err(self.pos, format!("expected end of input after `.`, found {found}"));
                    }
                    break;
                }
                Some(b'}') => return self.err(self.pos, "unbalanced braces: `}` without matching `{`"),
                Some(_) => {
                    let found = self.describe();
                    return self.err(self.pos, format!("expected `{{`, found {found}"));
                }
            }
        }
        Ok(layers)
    }

    fn token(&mut self) -> Result<LayerDesc> {
        self.skip_ws();
        let at = self.pos;
        if self.eat_keyword("MP") || self.eat_keyword("AP") {
            let max = self.src[at] == b'M';
            let k = self.positive("pool window")?;
            self.expect(b'(')?;
            self.expect(b'S')?;
            let stride = self.positive("stride")?;
            self.expect(b')')?;
            return Ok(if max {
                LayerDesc::MaxPool { k, stride }
            } else {
                LayerDesc::AvgPool { k, stride }
            });
        }
        if self.eat_keyword("FC") {
            return Ok(LayerDesc::Fc {
                out: self.positive("FC width")?,
            });
        }
        if self.eat_keyword("GB") {
            self.expect(b'(')?;
            let num_at = self.pos;
            let std = self.number("blur std")?;
            if !(std > 0.0) {
                return self.err(num_at, format!("blur std must be positive, got {std}"));
            }
            self.expect(b')')?;
            return Ok(LayerDesc::GaussBlur { std });
        }
        if self.eat_keyword("G1") || self.eat_keyword("G2") {
            let nb_type = if self.src[at + 1] == b'1' {
                NeighborhoodType::Type1
            } else {
                NeighborhoodType::Type2
            };
            self.expect(b'(')?;
            let num_at = self.pos;
            let sigma = self.number("sigma")?;
            if !(sigma > 0.0 && sigma <= 1.0) {
                return self.err(num_at, format!("sigma must lie in (0, 1], got {sigma}"));
            }
            self.expect(b')')?;
            return Ok(LayerDesc::Gnpp { nb_type, sigma });
        }
        if self.eat_keyword("C") {
            let k = self.positive("kernel size")?;
            self.expect(b'(')?;
            self.expect(b'S')?;
            let stride = self.positive("stride")?;
            let pad = if self.peek() == Some(b'P') {
                self.pos += 1;
                self.integer("padding")?
            } else {
                0
            };
            self.expect(b')')?;
            self.expect(b'@')?;
            let out_channels = self.positive("channel count")?;
            return Ok(LayerDesc::Conv {
                k,
                stride,
                pad,
                out_channels,
            });
        }
        if self.eat_keyword("D") {
            let num_at = self.pos;
            let ratio = self.number("dropout ratio")?;
            if !(0.0..1.0).contains(&ratio) {
                return self.err(num_at, format!("dropout ratio must lie in [0, 1), got {ratio}"));
            }
            return Ok(LayerDesc::Dropout { ratio });
        }
        let found = self.describe();
        self.err(
            at,
            format!("unknown layer token {found}; expected one of C, MP, AP, FC, D, G1, G2, GB"),
        )
    }
}
