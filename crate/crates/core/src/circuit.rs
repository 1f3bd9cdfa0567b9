//! Flat SPICE-subset netlists.
//!
//! Supported cards (first letter is case-insensitive):
//!
//! ```text
//! Rname n1 n2 value          Cname n1 n2 value          Lname n1 n2 value
//! Vname n1 n2 [DC] value     Iname n1 n2 [DC] value
//! Mname nd ng ns nb model W=<v> L=<v> NF=<v> [KEY=<v> ...]
//! .global KEY=value [KEY=value ...]
//! .class NAME
//! .end
//! ```
//!
//! Lines starting with `*` are comments and lines starting with `+` continue
//! the previous card. Numbers accept the engineering suffixes
//! `f p n u m k meg g` (case-insensitive, so `M` is milli).

use alloc::borrow::ToOwned;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::{self, Write as _};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum ComponentKind {
    Mosfet,
    Resistor,
    Capacitor,
    Inductor,
    VSource,
    ISource,
}

impl ComponentKind {
    pub fn from_letter(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'M' => Some(Self::Mosfet),
            'R' => Some(Self::Resistor),
            'C' => Some(Self::Capacitor),
            'L' => Some(Self::Inductor),
            'V' => Some(Self::VSource),
            'I' => Some(Self::ISource),
            _ => None,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Self::Mosfet => 'M',
            Self::Resistor => 'R',
            Self::Capacitor => 'C',
            Self::Inductor => 'L',
            Self::VSource => 'V',
            Self::ISource => 'I',
        }
    }

    /// Pin roles in card order.
    pub fn roles(self) -> &'static [PinRole] {
        match self {
            Self::Mosfet => &[PinRole::Drain, PinRole::Gate, PinRole::Source, PinRole::Body],
            _ => &[PinRole::Plus, PinRole::Minus],
        }
    }

    pub fn pin_count(self) -> usize {
        self.roles().len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum PinRole {
    Drain,
    Gate,
    Source,
    Body,
    Plus,
    Minus,
}

impl PinRole {
    /// Position of the hot bit in the 4-wide pin-role block: gate, source,
    /// drain, body for transistors; plus, minus for two-terminal devices.
    pub fn one_hot_index(self) -> usize {
        match self {
            Self::Gate | Self::Plus => 0,
            Self::Source | Self::Minus => 1,
            Self::Drain => 2,
            Self::Body => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Drain => "drain",
            Self::Gate => "gate",
            Self::Source => "source",
            Self::Body => "body",
            Self::Plus => "plus",
            Self::Minus => "minus",
        }
    }
}

impl fmt::Display for PinRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parameter key holding the value of R, C, L and source cards.
pub const VALUE: &str = "value";

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub name: String,
    pub kind: ComponentKind,
    pub pins: Vec<(PinRole, String)>,
    pub params: BTreeMap<String, f64>,
    /// MOSFET model name; `None` for passives and sources.
    pub model: Option<String>,
    pub symmetry_group: Option<String>,
}

impl Component {
    pub fn param(&self, key: &str) -> Option<f64> {
        self.params.get(key).copied()
    }

    fn positive_keys(&self) -> &'static [&'static str] {
        match self.kind {
            ComponentKind::Mosfet => &["W", "L", "NF"],
            ComponentKind::Resistor | ComponentKind::Capacitor | ComponentKind::Inductor => &[VALUE],
            ComponentKind::VSource | ComponentKind::ISource => &[],
        }
    }

    /// First parameter that is non-finite, or non-positive where positivity
    /// is required.
    pub fn invalid_param(&self) -> Option<(&str, f64)> {
        let must_be_positive = self.positive_keys();
        self.params
            .iter()
            .find(|(k, v)| !v.is_finite() || (must_be_positive.contains(&k.as_str()) && **v <= 0.0))
            .map(|(k, v)| (k.as_str(), *v))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PinRef {
    pub component: String,
    pub role: PinRole,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Circuit {
    pub components: Vec<Component>,
    pub nets: BTreeMap<String, BTreeSet<PinRef>>,
    pub globals: BTreeMap<String, f64>,
    /// Empty when the netlist carries no `.class` card.
    pub circuit_class: String,
}

impl Circuit {
    pub fn component(&self, name: &str) -> Option<&Component> {
        self.components.iter().find(|c| c.name == name)
    }

    pub fn component_mut(&mut self, name: &str) -> Option<&mut Component> {
        self.components.iter_mut().find(|c| c.name == name)
    }

    pub fn pin_count(&self) -> usize {
        self.components.iter().map(|c| c.pins.len()).sum()
    }

    /// Rebuilds `nets` from the component pin lists.
    pub fn rebuild_nets(&mut self) {
        self.nets.clear();
        for c in &self.components {
            for (role, net) in &c.pins {
                self.nets.entry(net.clone()).or_default().insert(PinRef {
                    component: c.name.clone(),
                    role: *role,
                });
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("line {line}: unknown card `{card}`")]
    UnknownCard { line: usize, card: String },
    #[error("line {line}: {name} expects {expected} nodes, found {found}")]
    ArityError { line: usize, name: String, expected: usize, found: usize },
    #[error("line {line}: duplicate component name `{name}`")]
    DuplicateName { line: usize, name: String },
    #[error("line {line}: malformed number `{text}`")]
    MalformedNumber { line: usize, text: String },
    #[error("line {line}: {name}: parameter {param} = {value} is out of range")]
    InvalidParam { line: usize, name: String, param: String, value: String },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("netlist contains no component cards")]
    EmptyCircuit,
}

/// Source line numbers recorded while parsing, used to locate diagnostics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SourceMap {
    pub components: BTreeMap<String, usize>,
    pub nets: BTreeMap<String, usize>,
}

const SUFFIXES: [(&str, i32); 8] = [
    ("meg", 6),
    ("f", -15),
    ("p", -12),
    ("n", -9),
    ("u", -6),
    ("m", -3),
    ("k", 3),
    ("g", 9),
];

/// Parses a number with an optional engineering suffix.
///
/// The suffix is folded into the decimal exponent before conversion, so
/// `"4.7u"` rounds exactly like `"4.7e-6"`.
pub fn parse_number(text: &str) -> Option<f64> {
    let lower = text.to_ascii_lowercase();
    let (mantissa, shift) = SUFFIXES
        .iter()
        .find_map(|(s, e)| lower.strip_suffix(s).map(|m| (m, *e)))
        .unwrap_or((lower.as_str(), 0));
    if mantissa.is_empty()
        || !mantissa.bytes().all(|b| b.is_ascii_digit() || matches!(b, b'.' | b'+' | b'-' | b'e'))
        || !mantissa.bytes().any(|b| b.is_ascii_digit())
    {
        return None;
    }
    if shift == 0 {
        return mantissa.parse().ok();
    }
    let (digits, exp) = match mantissa.split_once('e') {
        Some((d, e)) => (d, e.parse::<i32>().ok()?),
        None => (mantissa, 0),
    };
    format!("{digits}e{}", exp + shift).parse().ok()
}

struct Card {
    line: usize,
    tokens: Vec<String>,
}

fn tokenize(text: &str) -> Result<Vec<Card>, ParseError> {
    let mut cards: Vec<Card> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('*') {
            continue;
        }
        let (body, continuation) = match trimmed.strip_prefix('+') {
            Some(rest) => (rest, true),
            None => (trimmed, false),
        };
        // `W = 10u` and `W=10u` tokenize the same way.
        let spaced = body.replace('=', " = ");
        let mut tokens: Vec<String> = Vec::new();
        let mut parts = spaced.split_whitespace().peekable();
        while let Some(tok) = parts.next() {
            if tok == "=" {
                let key = tokens.pop().ok_or_else(|| ParseError::Syntax {
                    line,
                    message: "`=` without a key".to_owned(),
                })?;
                let value = parts.next().ok_or_else(|| ParseError::Syntax {
                    line,
                    message: format!("`{key}=` without a value"),
                })?;
                tokens.push(format!("{key}={value}"));
            } else {
                tokens.push(tok.to_owned());
            }
        }
        if continuation {
            let prev = cards.last_mut().ok_or_else(|| ParseError::Syntax {
                line,
                message: "continuation line without a preceding card".to_owned(),
            })?;
            prev.tokens.extend(tokens);
        } else {
            cards.push(Card { line, tokens });
        }
    }
    Ok(cards)
}

fn number(line: usize, text: &str) -> Result<f64, ParseError> {
    parse_number(text).ok_or_else(|| ParseError::MalformedNumber { line, text: text.to_owned() })
}

fn key_value(line: usize, tok: &str) -> Result<Option<(String, f64)>, ParseError> {
    match tok.split_once('=') {
        Some((k, v)) => Ok(Some((k.to_owned(), number(line, v)?))),
        None => Ok(None),
    }
}

/// Parses netlist text into a [`Circuit`].
pub fn parse_netlist(text: &str) -> Result<Circuit, ParseError> {
    parse_netlist_with_source(text).map(|(c, _)| c)
}

/// Like [`parse_netlist`], also returning the line of each card.
pub fn parse_netlist_with_source(text: &str) -> Result<(Circuit, SourceMap), ParseError> {
    let mut circuit = Circuit::default();
    let mut source = SourceMap::default();
    let mut seen = BTreeSet::new();

    for card in tokenize(text)? {
        let line = card.line;
        let head = &card.tokens[0];
        if let Some(directive) = head.strip_prefix('.') {
            match directive.to_ascii_lowercase().as_str() {
                "global" => {
                    for tok in &card.tokens[1..] {
                        let (k, v) = key_value(line, tok)?.ok_or_else(|| ParseError::Syntax {
                            line,
                            message: format!("expected KEY=value in .global, found `{tok}`"),
                        })?;
                        if !v.is_finite() {
                            return Err(ParseError::InvalidParam {
                                line,
                                name: ".global".to_owned(),
                                param: k,
                                value: v.to_string(),
                            });
                        }
                        circuit.globals.insert(k, v);
                    }
                }
                "class" => match &card.tokens[1..] {
                    [name] => circuit.circuit_class = name.clone(),
                    _ => {
                        return Err(ParseError::Syntax {
                            line,
                            message: "expected `.class NAME`".to_owned(),
                        })
                    }
                },
                "end" => break,
                _ => return Err(ParseError::UnknownCard { line, card: head.clone() }),
            }
            continue;
        }

        let kind = head
            .chars()
            .next()
            .and_then(ComponentKind::from_letter)
            .ok_or_else(|| ParseError::UnknownCard { line, card: head.clone() })?;
        let name = head.clone();
        if !seen.insert(name.clone()) {
            return Err(ParseError::DuplicateName { line, name });
        }
        let component = parse_component(line, kind, name, &card.tokens[1..])?;
        source.components.insert(component.name.clone(), line);
        for (_, net) in &component.pins {
            source.nets.entry(net.clone()).or_insert(line);
        }
        circuit.components.push(component);
    }

    if circuit.components.is_empty() {
        return Err(ParseError::EmptyCircuit);
    }
    circuit.rebuild_nets();
    Ok((circuit, source))
}

fn parse_component(
    line: usize,
    kind: ComponentKind,
    name: String,
    rest: &[String],
) -> Result<Component, ParseError> {
    let roles = kind.roles();
    let mut params = BTreeMap::new();
    let mut positional: Vec<&str> = Vec::new();
    for tok in rest {
        match key_value(line, tok)? {
            Some((k, v)) => {
                params.insert(k.to_ascii_uppercase(), v);
            }
            None => positional.push(tok),
        }
    }

    let (nodes, model) = match kind {
        ComponentKind::Mosfet => {
            if !params.keys().all(|k| !k.is_empty()) {
                return Err(ParseError::Syntax { line, message: "empty parameter key".to_owned() });
            }
            match positional.split_last() {
                Some((model, nodes)) if nodes.len() == roles.len() => (nodes.to_vec(), Some((*model).to_owned())),
                Some((_, nodes)) => {
                    return Err(ParseError::ArityError {
                        line,
                        name,
                        expected: roles.len(),
                        found: nodes.len(),
                    })
                }
                None => {
                    return Err(ParseError::ArityError { line, name, expected: roles.len(), found: 0 })
                }
            }
        }
        _ => {
            if !params.is_empty() {
                return Err(ParseError::Syntax {
                    line,
                    message: format!("{name}: unexpected KEY=value parameter"),
                });
            }
            let mut toks = positional.clone();
            let value_tok = toks.pop().ok_or(ParseError::ArityError {
                line,
                name: name.clone(),
                expected: roles.len(),
                found: 0,
            })?;
            if matches!(kind, ComponentKind::VSource | ComponentKind::ISource)
                && toks.last().is_some_and(|t| t.eq_ignore_ascii_case("dc"))
            {
                toks.pop();
            }
            if toks.len() != roles.len() {
                return Err(ParseError::ArityError { line, name, expected: roles.len(), found: toks.len() });
            }
            params.insert(VALUE.to_owned(), number(line, value_tok)?);
            (toks, None)
        }
    };

    let component = Component {
        pins: roles.iter().copied().zip(nodes.iter().map(|n| (*n).to_owned())).collect(),
        name,
        kind,
        params,
        model,
        symmetry_group: None,
    };
    if let Some((param, value)) = component.invalid_param() {
        return Err(ParseError::InvalidParam {
            line,
            name: component.name.clone(),
            param: param.to_owned(),
            value: value.to_string(),
        });
    }
    Ok(component)
}

/// Prints a circuit back as card text that [`parse_netlist`] reads back to an
/// identical value. Numbers use the shortest round-trip exponent form.
pub fn emit_netlist(c: &Circuit) -> String {
    let mut out = String::new();
    if !c.circuit_class.is_empty() {
        let _ = writeln!(out, ".class {}", c.circuit_class);
    }
    if !c.globals.is_empty() {
        out.push_str(".global");
        for (k, v) in &c.globals {
            let _ = write!(out, " {k}={v:e}");
        }
        out.push('\n');
    }
    for comp in &c.components {
        out.push_str(&comp.name);
        for (_, net) in &comp.pins {
            out.push(' ');
            out.push_str(net);
        }
        match comp.kind {
            ComponentKind::Mosfet => {
                let _ = write!(out, " {}", comp.model.as_deref().unwrap_or("nmos"));
                for (k, v) in &comp.params {
                    let _ = write!(out, " {k}={v:e}");
                }
            }
            _ => {
                let v = comp.param(VALUE).unwrap_or(0.0);
                let _ = write!(out, " {v:e}");
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Level {
    Warn,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagCode {
    OrphanPin,
    DanglingNet,
    EmptyNet,
    PinInMultipleNets,
    UnknownPinRef,
    DuplicateName,
    ArityViolation,
    InvalidParam,
}

impl DiagCode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::OrphanPin => "OrphanPin",
            Self::DanglingNet => "DanglingNet",
            Self::EmptyNet => "EmptyNet",
            Self::PinInMultipleNets => "PinInMultipleNets",
            Self::UnknownPinRef => "UnknownPinRef",
            Self::DuplicateName => "DuplicateName",
            Self::ArityViolation => "ArityViolation",
            Self::InvalidParam => "InvalidParam",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub level: Level,
    pub code: DiagCode,
    pub message: String,
    pub line: Option<usize>,
}

/// Structural checks on a circuit. Parsed circuits only ever produce
/// `DanglingNet` warnings; the error codes guard hand-built values.
pub fn validate(c: &Circuit) -> Vec<Diagnostic> {
    validate_with_source(c, &SourceMap::default())
}

pub fn validate_with_source(c: &Circuit, source: &SourceMap) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let comp_line = |name: &str| source.components.get(name).copied();
    let mut names = BTreeSet::new();

    for comp in &c.components {
        if !names.insert(comp.name.as_str()) {
            out.push(Diagnostic {
                level: Level::Error,
                code: DiagCode::DuplicateName,
                message: format!("component name `{}` is used more than once", comp.name),
                line: comp_line(&comp.name),
            });
        }
        if comp.pins.len() != comp.kind.pin_count() {
            out.push(Diagnostic {
                level: Level::Error,
                code: DiagCode::ArityViolation,
                message: format!(
                    "{} has {} pins, {:?} requires {}",
                    comp.name,
                    comp.pins.len(),
                    comp.kind,
                    comp.kind.pin_count()
                ),
                line: comp_line(&comp.name),
            });
        }
        if let Some((param, value)) = comp.invalid_param() {
            out.push(Diagnostic {
                level: Level::Error,
                code: DiagCode::InvalidParam,
                message: format!("{}: parameter {param} = {value} is out of range", comp.name),
                line: comp_line(&comp.name),
            });
        }
        for (role, net) in &comp.pins {
            let pin = PinRef { component: comp.name.clone(), role: *role };
            if !c.nets.get(net).is_some_and(|pins| pins.contains(&pin)) {
                out.push(Diagnostic {
                    level: Level::Error,
                    code: DiagCode::OrphanPin,
                    message: format!("pin {}.{role} is not attached to net `{net}`", comp.name),
                    line: comp_line(&comp.name),
                });
            }
        }
    }

    let mut owner: BTreeMap<&PinRef, &str> = BTreeMap::new();
    for (net, pins) in &c.nets {
        let net_line = source.nets.get(net).copied();
        match pins.len() {
            0 => out.push(Diagnostic {
                level: Level::Error,
                code: DiagCode::EmptyNet,
                message: format!("net `{net}` has no pins"),
                line: net_line,
            }),
            1 => out.push(Diagnostic {
                level: Level::Warn,
                code: DiagCode::DanglingNet,
                message: format!("net `{net}` has a single pin"),
                line: net_line,
            }),
            _ => {}
        }
        for pin in pins {
            let known = c
                .component(&pin.component)
                .is_some_and(|comp| comp.pins.iter().any(|(r, _)| *r == pin.role));
            if !known {
                out.push(Diagnostic {
                    level: Level::Error,
                    code: DiagCode::UnknownPinRef,
                    message: format!("net `{net}` lists unknown pin {}.{}", pin.component, pin.role),
                    line: net_line,
                });
            }
            if let Some(first) = owner.insert(pin, net.as_str()) {
                out.push(Diagnostic {
                    level: Level::Error,
                    code: DiagCode::PinInMultipleNets,
                    message: format!(
                        "pin {}.{} appears in nets `{first}` and `{net}`",
                        pin.component, pin.role
                    ),
                    line: net_line,
                });
            }
        }
    }
    out
}
