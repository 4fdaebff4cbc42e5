//! Plain-text model files.
//!
//! ```text
//! anchor-rl-model 1
//! dims <states> <actions> <feature_dim>
//! discount <γ>
//! features        # |S||A| rows of K values
//! factor          # K rows of |S| values
//! reward          # |S||A| values, one per line
//! anchors         # anchor pair indices on one line
//! transition      # optional: |S||A| rows of |S| values for a misspecified truth
//! end
//! ```
//!
//! Floats are written with 17 significant digits, so a save/load cycle is
//! exact. Blank lines and `#` comments are ignored.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linear::{build_anchor_set, AnchorSet, LinearMdp};
use crate::mdp::TabularMdp;

pub const HEADER: &str = "anchor-rl-model";
pub const VERSION: u32 = 1;

/// Parsed file contents, before any model invariant is checked.
#[derive(Clone, Debug, PartialEq)]
pub struct RawModel {
    pub num_states: usize,
    pub num_actions: usize,
    pub feature_dim: usize,
    pub discount: f64,
    pub features: DMatrix<f64>,
    pub factor: DMatrix<f64>,
    pub reward: DVector<f64>,
    pub anchors: Vec<usize>,
    pub transition: Option<DMatrix<f64>>,
}

/// A validated model: the linear kernel, its anchors and the MDP samples are
/// drawn from (the linear kernel itself unless a misspecified truth is given).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    linear: LinearMdp,
    anchors: AnchorSet,
    truth: Option<TabularMdp>,
}

impl ModelFile {
    pub fn new(linear: LinearMdp, anchors: AnchorSet, truth: Option<TabularMdp>) -> Result<Self> {
        if let Some(t) = &truth {
            if t.num_states() != linear.base().num_states()
                || t.num_actions() != linear.base().num_actions()
            {
                return Err(Error::Precondition(
                    "truth and linear model differ in shape".into(),
                ));
            }
        }
        Ok(Self {
            linear,
            anchors,
            truth,
        })
    }

    pub fn linear(&self) -> &LinearMdp {
        &self.linear
    }

    pub fn anchors(&self) -> &AnchorSet {
        &self.anchors
    }

    /// The misspecified truth, when present.
    pub fn truth(&self) -> Option<&TabularMdp> {
        self.truth.as_ref()
    }

    /// The MDP that samples and errors refer to.
    pub fn mdp(&self) -> &TabularMdp {
        self.truth.as_ref().unwrap_or_else(|| self.linear.base())
    }

    pub fn to_raw(&self) -> RawModel {
        let base = self.linear.base();
        RawModel {
            num_states: base.num_states(),
            num_actions: base.num_actions(),
            feature_dim: self.linear.feature_dim(),
            discount: base.discount(),
            features: self.linear.features().clone(),
            factor: self.linear.factor().clone(),
            reward: base.reward().clone(),
            anchors: self.anchors.pairs().to_vec(),
            transition: self.truth.as_ref().map(|t| t.transition().clone()),
        }
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        self.to_raw().write(writer)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        RawModel::read(reader)?.build()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(File::open(path)?)
    }
}

fn write_row<W: Write>(w: &mut W, values: impl Iterator<Item = f64>) -> std::io::Result<()> {
    let mut first = true;
    for x in values {
        if !first {
            w.write_all(b" ")?;
        }
        write!(w, "{x:.16e}")?;
        first = false;
    }
    writeln!(w)
}

impl RawModel {
    /// Runs the model constructors; any violated invariant is an error.
    pub fn build(&self) -> Result<ModelFile> {
        let linear = LinearMdp::from_factors(
            self.num_states,
            self.num_actions,
            self.features.clone(),
            self.factor.clone(),
            self.reward.clone(),
            self.discount,
        )?;
        let anchors = build_anchor_set(&linear, &self.anchors)?;
        let truth = match &self.transition {
            Some(p) => Some(linear.base().with_transition(p.clone())?),
            None => None,
        };
        ModelFile::new(linear, anchors, truth)
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = writer;
        writeln!(w, "{HEADER} {VERSION}")?;
        writeln!(
            w,
            "dims {} {} {}",
            self.num_states, self.num_actions, self.feature_dim
        )?;
        writeln!(w, "discount {:.16e}", self.discount)?;
        writeln!(w, "features")?;
        for row in self.features.row_iter() {
            write_row(&mut w, row.iter().copied())?;
        }
        writeln!(w, "factor")?;
        for row in self.factor.row_iter() {
            write_row(&mut w, row.iter().copied())?;
        }
        writeln!(w, "reward")?;
        for &r in self.reward.iter() {
            writeln!(w, "{r:.16e}")?;
        }
        writeln!(w, "anchors")?;
        let anchors: Vec<String> = self.anchors.iter().map(|a| a.to_string()).collect();
        writeln!(w, "{}", anchors.join(" "))?;
        if let Some(p) = &self.transition {
            writeln!(w, "transition")?;
            for row in p.row_iter() {
                write_row(&mut w, row.iter().copied())?;
            }
        }
        writeln!(w, "end")?;
        Ok(())
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let mut lines = Lines::new(BufReader::new(reader))?;

        let (n, header) = lines.expect_next("header")?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(HEADER) {
            return Err(parse_err(n, format!("expected `{HEADER} {VERSION}`")));
        }
        let version: u32 = parse_token(n, parts.next(), "version")?;
        if version != VERSION {
            return Err(parse_err(n, format!("unsupported version {version}")));
        }

        let (n, dims) = lines.keyword_line("dims")?;
        let dims: Vec<usize> = parse_all(n, &dims)?;
        let [num_states, num_actions, feature_dim] = dims[..] else {
            return Err(parse_err(n, "dims needs exactly three values".into()));
        };
        if num_states == 0 || num_actions == 0 || feature_dim == 0 {
            return Err(parse_err(n, "dimensions must be positive".into()));
        }
        let pairs = num_states * num_actions;

        let (n, gamma) = lines.keyword_line("discount")?;
        let discount: f64 = parse_token(n, gamma.split_whitespace().next(), "discount")?;

        lines.section("features")?;
        let features = lines.matrix(pairs, feature_dim)?;
        lines.section("factor")?;
        let factor = lines.matrix(feature_dim, num_states)?;
        lines.section("reward")?;
        let reward = DVector::from_iterator(pairs, lines.matrix(pairs, 1)?.iter().copied());
        lines.section("anchors")?;
        let (n, row) = lines.expect_next("anchor indices")?;
        let anchors: Vec<usize> = parse_all(n, &row)?;

        let (n, next) = lines.expect_next("`transition` or `end`")?;
        let transition = match next.as_str() {
            "transition" => {
                let p = lines.matrix(pairs, num_states)?;
                lines.section("end")?;
                Some(p)
            }
            "end" => None,
            other => return Err(parse_err(n, format!("unexpected `{other}`"))),
        };
        if let Some((n, extra)) = lines.next()? {
            return Err(parse_err(n, format!("trailing content `{extra}`")));
        }

        Ok(Self {
            num_states,
            num_actions,
            feature_dim,
            discount,
            features,
            factor,
            reward,
            anchors,
            transition,
        })
    }
}

fn parse_err(line: usize, msg: String) -> Error {
    Error::Parse { line, msg }
}

fn parse_token<T: std::str::FromStr>(line: usize, tok: Option<&str>, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| parse_err(line, format!("cannot parse {what} from `{tok}`")))
}

fn parse_all<T: std::str::FromStr>(line: usize, text: &str) -> Result<Vec<T>> {
    text.split_whitespace()
        .map(|t| parse_token(line, Some(t), "value"))
        .collect()
}

/// Non-empty, comment-stripped lines with 1-based line numbers.
struct Lines<R> {
    inner: std::io::Lines<R>,
    number: usize,
}

impl<R: BufRead> Lines<R> {
    fn new(reader: R) -> Result<Self> {
        Ok(Self {
            inner: reader.lines(),
            number: 0,
        })
    }

    fn next(&mut self) -> Result<Option<(usize, String)>> {
        for line in self.inner.by_ref() {
            self.number += 1;
            let line = line?;
            let body = line.split('#').next().unwrap_or("").trim();
            if !body.is_empty() {
                return Ok(Some((self.number, body.to_string())));
            }
        }
        Ok(None)
    }

    fn expect_next(&mut self, what: &str) -> Result<(usize, String)> {
        self.next()?.ok_or_else(|| {
            parse_err(
                self.number + 1,
                format!("unexpected end of file, expected {what}"),
            )
        })
    }

    fn keyword_line(&mut self, keyword: &str) -> Result<(usize, String)> {
        let (n, line) = self.expect_next(keyword)?;
        match line.strip_prefix(keyword) {
            Some(rest) if rest.starts_with(char::is_whitespace) => Ok((n, rest.trim().to_string())),
            _ => Err(parse_err(n, format!("expected `{keyword} ...`"))),
        }
    }

    fn section(&mut self, name: &str) -> Result<()> {
        let (n, line) = self.expect_next(name)?;
        if line != name {
            return Err(parse_err(
                n,
                format!("expected section `{name}`, found `{line}`"),
            ));
        }
        Ok(())
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (n, line) = self.expect_next("matrix row")?;
            let row: Vec<f64> = parse_all(n, &line)?;
            if row.len() != cols {
                return Err(parse_err(
                    n,
                    format!("expected {cols} values, found {}", row.len()),
                ));
            }
            data.extend(row);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &data))
    }
}
