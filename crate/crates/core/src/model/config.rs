use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::blocks::{head_groups, AttentionKind};
use crate::error::{Error, Result};

/// The three published model sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    T,
    Xs,
    S,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::T => "t",
            Variant::Xs => "xs",
            Variant::S => "s",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "t" => Ok(Variant::T),
            "xs" => Ok(Variant::Xs),
            "s" => Ok(Variant::S),
            _ => Err(Error::Config(format!("unknown variant `{s}` (expected t, xs or s)"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-stage fusion kernel presets: one size everywhere, or one size for
/// the first two stages and another for the last two.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelSchedule {
    All3,
    All5,
    /// 3×3 in stages 1–2, 5×5 in stages 3–4 (the default).
    Small3Large5,
    /// 5×5 in stages 1–2, 3×3 in stages 3–4.
    Small5Large3,
}

impl KernelSchedule {
    pub fn kernels(self) -> [usize; 4] {
        match self {
            KernelSchedule::All3 => [3; 4],
            KernelSchedule::All5 => [5; 4],
            KernelSchedule::Small3Large5 => [3, 3, 5, 5],
            KernelSchedule::Small5Large3 => [5, 5, 3, 3],
        }
    }
}

impl FromStr for KernelSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "3x3" => Ok(KernelSchedule::All3),
            "5x5" => Ok(KernelSchedule::All5),
            "3x3/5x5" => Ok(KernelSchedule::Small3Large5),
            "5x5/3x3" => Ok(KernelSchedule::Small5Large3),
            _ => Err(Error::Config(format!("unknown kernel schedule `{s}` (expected 3x3, 5x5, 3x3/5x5 or 5x5/3x3)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageConfig {
    pub dim: usize,
    pub depth: usize,
    /// Key/value reduction factor of each head group.
    pub rs: Vec<usize>,
    /// Fusion convolution kernel size and padding.
    pub kernel: usize,
    pub padding: usize,
    /// Fraction of channels routed to the fusion convolution path.
    pub split: f64,
    /// Kernel and stride of the patch embedding that opens the stage.
    pub patch: usize,
}

impl StageConfig {
    /// Channels on the convolution path of the fusion layer.
    pub fn conv_channels(&self, cff: bool) -> usize {
        if cff {
            ((self.split * self.dim as f64).round() as usize).max(1)
        } else {
            0
        }
    }
}

/// Full description of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub resolution: usize,
    pub in_channels: usize,
    pub num_classes: usize,
    pub stem_width: usize,
    pub stages: Vec<StageConfig>,
    pub attention: AttentionKind,
    pub lfe: bool,
    pub cff: bool,
    pub use_pe: bool,
    pub ffn_ratio: usize,
    pub head_dim: usize,
}

/// Default fraction of channels on the fusion convolution path, per stage.
pub const DEFAULT_SPLITS: [f64; 4] = [0.125, 0.125, 0.375, 0.625];

const R_SCHEDULE: [&[usize]; 4] = [&[8, 4], &[4, 2, 1], &[2, 1], &[1]];

impl ModelConfig {
    /// The published configuration at 224×224 input with 100 classes.
    pub fn variant(v: Variant) -> Self {
        let (stem, dims, depths) = match v {
            Variant::T => (16, [32, 64, 128, 256], [1, 2, 4, 1]),
            Variant::Xs => (24, [48, 96, 192, 384], [1, 1, 3, 2]),
            Variant::S => (32, [64, 128, 256, 512], [2, 2, 4, 2]),
        };
        let kernels = KernelSchedule::Small3Large5.kernels();
        let stages = (0..4)
            .map(|i| StageConfig {
                dim: dims[i],
                depth: depths[i],
                rs: R_SCHEDULE[i].to_vec(),
                kernel: kernels[i],
                padding: (kernels[i] - 1) / 2,
                split: DEFAULT_SPLITS[i],
                patch: 2,
            })
            .collect();
        Self {
            variant: v,
            resolution: 224,
            in_channels: 3,
            num_classes: 100,
            stem_width: stem,
            stages,
            attention: AttentionKind::Lightweight,
            lfe: true,
            cff: true,
            use_pe: false,
            ffn_ratio: 4,
            head_dim: 32,
        }
    }

    /// Switches input resolution. At 32×32 the first patch embedding keeps
    /// the stem's resolution (1×1, stride 1), giving stage maps of
    /// 16/8/4/2, and every reduction factor is halved and clamped to
    /// `1 ≤ R ≤ stage size`.
    pub fn with_resolution(mut self, res: usize) -> Result<Self> {
        match res {
            224 => {
                self.resolution = 224;
                for s in &mut self.stages {
                    s.patch = 2;
                }
            }
            32 => {
                self.resolution = 32;
                self.stages[0].patch = 1;
                let sizes = [16, 8, 4, 2];
                for (s, &size) in self.stages.iter_mut().zip(&sizes) {
                    for r in &mut s.rs {
                        *r = (*r / 2).max(1).min(size);
                    }
                }
            }
            _ => return Err(Error::Config(format!("unsupported resolution {res} (expected 224 or 32)"))),
        }
        Ok(self)
    }

    pub fn with_kernels(mut self, schedule: KernelSchedule) -> Self {
        for (s, k) in self.stages.iter_mut().zip(schedule.kernels()) {
            s.kernel = k;
            s.padding = (k - 1) / 2;
        }
        self
    }

    pub fn depths(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.depth).collect()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.dim).collect()
    }

    /// Spatial size entering each stage.
    pub fn stage_resolutions(&self) -> Result<Vec<usize>> {
        let mut size = self.resolution;
        if size < 2 || !size.is_multiple_of(2) {
            return Err(Error::Config(format!("resolution {size} must be even and at least 2")));
        }
        size /= 2;
        let mut out = Vec::with_capacity(self.stages.len());
        for (i, s) in self.stages.iter().enumerate() {
            if s.patch == 0 || !size.is_multiple_of(s.patch) || size < s.patch {
                return Err(Error::Config(format!(
                    "stage{} patch size {} does not divide its {size}x{size} input",
                    i + 1,
                    s.patch
                )));
            }
            size /= s.patch;
            out.push(size);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.stages.is_empty() {
            return bad("at least one stage is required".into());
        }
        if self.in_channels == 0 || self.num_classes == 0 || self.stem_width == 0 || self.ffn_ratio == 0 {
            return bad("in_channels, num_classes, stem_width and ffn_ratio must be positive".into());
        }
        let sizes = self.stage_resolutions()?;
        for (i, (s, &size)) in self.stages.iter().zip(&sizes).enumerate() {
            let name = format!("stage{}", i + 1);
            if s.dim == 0 || s.depth == 0 {
                return bad(format!("{name}: dim and depth must be positive"));
            }
            if s.rs.is_empty() || s.rs.iter().any(|&r| r == 0 || r > size) {
                return bad(format!("{name}: reduction factors {:?} must lie in 1..={size}", s.rs));
            }
            if self.cff {
                if !(s.split > 0.0 && s.split < 1.0) {
                    return bad(format!("{name}: split {} must lie in (0, 1)", s.split));
                }
                if s.kernel == 0 || 2 * s.padding + 1 != s.kernel {
                    return bad(format!("{name}: kernel {} with padding {} does not preserve size", s.kernel, s.padding));
                }
            }
            let conv = s.conv_channels(self.cff);
            if conv >= s.dim {
                return bad(format!("{name}: split {} leaves no attention channels", s.split));
            }
            head_groups(s.dim - conv, &s.rs).map_err(|e| Error::Config(format!("{name}: {e}")))?;
        }
        Ok(())
    }

    /// Applies `key = value` settings on top of `self`. A `variant` key
    /// resets to that variant first and a `resolution` key is applied next,
    /// so the remaining keys always win.
    pub fn apply_pairs(mut self, pairs: &[(String, String)]) -> Result<Self> {
        let get = |k: &str| pairs.iter().rev().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
        if let Some(v) = get("variant") {
            let res = self.resolution;
            self = Self::variant(v.parse()?);
            if get("resolution").is_none() && res != 224 {
                self = self.with_resolution(res)?;
            }
        }
        if let Some(r) = get("resolution") {
            self = self.with_resolution(parse_num(r, "resolution")?)?;
        }
        if let Some(k) = get("kernels") {
            self = self.with_kernels(k.parse()?);
        }
        for (key, value) in pairs {
            self.set(key, value)?;
        }
        Ok(self)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "variant" | "resolution" | "kernels" => {}
            "num_classes" => self.num_classes = parse_num(value, key)?,
            "in_channels" => self.in_channels = parse_num(value, key)?,
            "stem_width" => self.stem_width = parse_num(value, key)?,
            "ffn_ratio" => self.ffn_ratio = parse_num(value, key)?,
            "head_dim" => self.head_dim = parse_num(value, key)?,
            "attention" => {
                self.attention = match value {
                    "lightweight" => AttentionKind::Lightweight,
                    "normal" => AttentionKind::Normal,
                    _ => return Err(Error::Config(format!("attention must be lightweight or normal, got `{value}`"))),
                }
            }
            "lfe" => self.lfe = parse_switch(value, key)?,
            "cff" => self.cff = parse_switch(value, key)?,
            "use_pe" => self.use_pe = parse_switch(value, key)?,
            _ => {
                let Some((stage, field)) = key.split_once('.') else {
                    return Err(Error::Config(format!("unknown key `{key}`")));
                };
                let idx = stage
                    .strip_prefix("stage")
                    .and_then(|n| n.parse::<usize>().ok())
                    .filter(|&n| (1..=self.stages.len()).contains(&n))
                    .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
                let s = &mut self.stages[idx - 1];
                match field {
                    "dim" => s.dim = parse_num(value, key)?,
                    "depth" => s.depth = parse_num(value, key)?,
                    "R" => {
                        s.rs = value
                            .split(',')
                            .map(|r| parse_num(r.trim(), key))
                            .collect::<Result<_>>()?
                    }
                    "Ck" => {
                        s.kernel = parse_num(value, key)?;
                        s.padding = s.kernel.saturating_sub(1) / 2;
                    }
                    "P" => s.padding = parse_num(value, key)?,
                    "split" => {
                        s.split = value
                            .parse()
                            .map_err(|_| Error::Config(format!("{key}: `{value}` is not a number")))?
                    }
                    "patch" => s.patch = parse_num(value, key)?,
                    _ => return Err(Error::Config(format!("unknown key `{key}`"))),
                }
            }
        }
        Ok(())
    }

    /// Explicit `P` keys are applied after `Ck` keys regardless of order.
    fn normalize_pairs(pairs: Vec<(String, String)>) -> Vec<(String, String)> {
        let (p, mut rest): (Vec<_>, Vec<_>) = pairs.into_iter().partition(|(k, _)| k.ends_with(".P"));
        rest.extend(p);
        rest
    }

    /// Parses the flat `key = value` format. Blank lines and `#` comments are
    /// ignored; settings start from variant `t` at 224 unless given.
    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        Self::variant(Variant::T).apply_pairs(&Self::normalize_pairs(pairs)).and_then(|c| {
            c.validate()?;
            Ok(c)
        })
    }

    /// Applies `key=value` overrides, as given on a command line.
    pub fn with_overrides(self, overrides: &[String]) -> Result<Self> {
        let mut pairs = Vec::with_capacity(overrides.len());
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        self.apply_pairs(&Self::normalize_pairs(pairs))
    }

    /// Every setting in the format read by [`ModelConfig::parse`].
    pub fn to_text(&self) -> String {
        let on = |b: bool| if b { "on" } else { "off" };
        let mut s = String::new();
        let _ = writeln!(s, "variant = {}", self.variant);
        let _ = writeln!(s, "resolution = {}", self.resolution);
        let _ = writeln!(s, "in_channels = {}", self.in_channels);
        let _ = writeln!(s, "num_classes = {}", self.num_classes);
        let _ = writeln!(s, "stem_width = {}", self.stem_width);
        for (i, st) in self.stages.iter().enumerate() {
            let rs: Vec<String> = st.rs.iter().map(usize::to_string).collect();
            let n = i + 1;
            let _ = writeln!(s, "stage{n}.dim = {}", st.dim);
            let _ = writeln!(s, "stage{n}.depth = {}", st.depth);
            let _ = writeln!(s, "stage{n}.R = {}", rs.join(","));
            let _ = writeln!(s, "stage{n}.Ck = {}", st.kernel);
            let _ = writeln!(s, "stage{n}.P = {}", st.padding);
            let _ = writeln!(s, "stage{n}.split = {}", st.split);
            let _ = writeln!(s, "stage{n}.patch = {}", st.patch);
        }
        let _ = writeln!(
            s,
            "attention = {}",
            match self.attention {
                AttentionKind::Lightweight => "lightweight",
                AttentionKind::Normal => "normal",
            }
        );
        let _ = writeln!(s, "lfe = {}", on(self.lfe));
        let _ = writeln!(s, "cff = {}", on(self.cff));
        let _ = writeln!(s, "use_pe = {}", on(self.use_pe));
        let _ = writeln!(s, "ffn_ratio = {}", self.ffn_ratio);
        let _ = writeln!(s, "head_dim = {}", self.head_dim);
        s
    }
}

fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

fn parse_num(v: &str, key: &str) -> Result<usize> {
    v.parse().map_err(|_| Error::Config(format!("{key}: `{v}` is not a non-negative integer")))
}

fn parse_switch(v: &str, key: &str) -> Result<bool> {
    match v {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected on or off, got `{v}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_geometry() {
        let s = ModelConfig::variant(Variant::S);
        assert_eq!(s.dims(), vec![64, 128, 256, 512]);
        assert_eq!(s.depths(), vec![2, 2, 4, 2]);
        assert_eq!(ModelConfig::variant(Variant::Xs).depths(), vec![1, 1, 3, 2]);
        assert_eq!(ModelConfig::variant(Variant::T).depths(), vec![1, 2, 4, 1]);
        assert_eq!(ModelConfig::variant(Variant::Xs).dims(), vec![48, 96, 192, 384]);
        assert_eq!(ModelConfig::variant(Variant::T).dims(), vec![32, 64, 128, 256]);
        assert_eq!(s.stage_resolutions().unwrap(), vec![56, 28, 14, 7]);
        let rs: Vec<Vec<usize>> = s.stages.iter().map(|st| st.rs.clone()).collect();
        assert_eq!(rs, vec![vec![8, 4], vec![4, 2, 1], vec![2, 1], vec![1]]);
        for v in [Variant::T, Variant::Xs, Variant::S] {
            ModelConfig::variant(v).validate().unwrap();
        }
    }

    #[test]
    fn native_32_halves_reductions() {
        let c = ModelConfig::variant(Variant::T).with_resolution(32).unwrap();
        assert_eq!(c.stage_resolutions().unwrap(), vec![16, 8, 4, 2]);
        let rs: Vec<Vec<usize>> = c.stages.iter().map(|st| st.rs.clone()).collect();
        assert_eq!(rs, vec![vec![4, 2], vec![2, 1, 1], vec![1, 1], vec![1]]);
        c.validate().unwrap();
        assert!(ModelConfig::variant(Variant::T).with_resolution(64).is_err());
    }

    #[test]
    fn text_roundtrip_and_overrides() {
        let c = ModelConfig::variant(Variant::Xs).with_resolution(32).unwrap().with_kernels(KernelSchedule::Small5Large3);
        assert_eq!(ModelConfig::parse(&c.to_text()).unwrap(), c);
        let text = "# comment\nvariant = s\nstage2.Ck = 5   # trailing\nuse_pe = on\n";
        let c = ModelConfig::parse(text).unwrap();
        assert_eq!((c.stages[1].kernel, c.stages[1].padding), (5, 2));
        assert!(c.use_pe);
        assert_eq!(c.variant, Variant::S);
        // Explicit padding wins over the derived one, whatever the order.
        let c = ModelConfig::parse("stage3.P = 1\nstage3.Ck = 3").unwrap();
        assert_eq!((c.stages[2].kernel, c.stages[2].padding), (3, 1));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ModelConfig::parse("bogus = 1").is_err());
        assert!(ModelConfig::parse("stage5.dim = 3").is_err());
        assert!(ModelConfig::parse("stage1.R = 8,x").is_err());
        assert!(ModelConfig::parse("no equals sign").is_err());
        assert!(ModelConfig::parse("stage4.R = 8").is_err());
        assert!(ModelConfig::parse("stage1.split = 1.0").is_err());
        assert!(ModelConfig::parse("variant = m").is_err());
        assert!(ModelConfig::parse("stage1.Ck = 4").is_err());
    }

    #[test]
    fn kernel_presets() {
        let ks = |s: &str| -> Vec<usize> {
            ModelConfig::parse(&format!("kernels = {s}")).unwrap().stages.iter().map(|x| x.kernel).collect()
        };
        assert_eq!(ks("3x3"), vec![3, 3, 3, 3]);
        assert_eq!(ks("5x5"), vec![5, 5, 5, 5]);
        assert_eq!(ks("3x3/5x5"), vec![3, 3, 5, 5]);
        assert_eq!(ks("5x5/3x3"), vec![5, 5, 3, 3]);
    }
}
