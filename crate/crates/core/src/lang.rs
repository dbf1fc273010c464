//! Environment descriptions and the plan-call language.
//!
//! Plan grammar (whitespace is allowed between any two tokens):
//!
//! ```text
//! plan  = call { ";" call } [ ";" ] ;
//! call  = ident "(" [ arg { "," arg } ] ")" ;
//! arg   = open color close ;
//! ```
//!
//! Accepted quote pairs: `'…'`, `"…"`, `‘…’`, `“…”`, `` `…' `` and
//! ``` ``…" ``` / ``` ``…'' ```.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{Area, Color, InventoryItem, ItemKind, WorldState};

pub const DESCRIPTION_PREFIX: &str = "Received areas information: ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AreaDescription {
    /// One-based index as printed.
    pub area_index: usize,
    pub items: Vec<InventoryItem>,
    pub obstacle_count: u32,
}

impl AreaDescription {
    pub fn from_area(area: &Area, index: usize) -> Self {
        Self {
            area_index: index,
            items: area.inventory.iter().filter(|i| i.count > 0).copied().collect(),
            obstacle_count: area.obstacle_count,
        }
    }

    pub fn render(&self) -> String {
        let mut out = format!("Area {} has ", self.area_index);
        for it in self.items.iter().filter(|i| i.count > 0) {
            let plural = if it.count == 1 { "" } else { "s" };
            out.push_str(&format!("{} {} {}{}, ", it.count, it.color, kind_word(it.kind), plural));
        }
        out.push_str(&format!("{} obstacles.", self.obstacle_count));
        out
    }
}

fn kind_word(kind: ItemKind) -> &'static str {
    match kind {
        ItemKind::Ball => "Ball",
        ItemKind::Zone => "Zone",
    }
}

pub fn render_area_description(area: &Area, index: usize) -> String {
    AreaDescription::from_area(area, index).render()
}

/// All areas, numbered from 1, behind the fixed prefix.
pub fn render_world_description(world: &WorldState) -> String {
    let sentences: Vec<String> = world
        .areas
        .iter()
        .enumerate()
        .map(|(i, a)| render_area_description(a, i + 1))
        .collect();
    format!("{DESCRIPTION_PREFIX}{}", sentences.join(" "))
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("not an area description: {0:?}")]
pub struct DescriptionError(pub String);

pub fn parse_area_description(sentence: &str) -> Result<AreaDescription, DescriptionError> {
    let bad = || DescriptionError(sentence.to_string());
    let rest = sentence.strip_prefix("Area ").ok_or_else(bad)?;
    let (idx, rest) = rest.split_once(" has ").ok_or_else(bad)?;
    let area_index = idx.parse().map_err(|_| bad())?;
    let rest = rest.strip_suffix(" obstacles.").ok_or_else(bad)?;
    let mut parts: Vec<&str> = rest.split(", ").collect();
    let obstacle_count = parts.pop().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let mut items = Vec::new();
    for p in parts {
        let mut words = p.split(' ');
        let (Some(n), Some(color), Some(kind), None) = (words.next(), words.next(), words.next(), words.next()) else {
            return Err(bad());
        };
        let count: u32 = n.parse().map_err(|_| bad())?;
        let color: Color = color.parse().map_err(|_| bad())?;
        let plural = if count == 1 { "" } else { "s" };
        let kind = [ItemKind::Ball, ItemKind::Zone]
            .into_iter()
            .find(|k| format!("{}{}", kind_word(*k), plural) == kind)
            .ok_or_else(bad)?;
        if count == 0 {
            return Err(bad());
        }
        items.push(InventoryItem { count, color, kind });
    }
    Ok(AreaDescription {
        area_index,
        items,
        obstacle_count,
    })
}

pub fn parse_world_description(text: &str) -> Result<Vec<AreaDescription>, DescriptionError> {
    let body = text
        .strip_prefix(DESCRIPTION_PREFIX)
        .ok_or_else(|| DescriptionError(text.to_string()))?;
    body.split_inclusive("obstacles.")
        .map(|s| parse_area_description(s.trim_start()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawCall", into = "RawCall")]
pub enum PrimitiveCall {
    SearchBall(Color),
    CatchTheBall(Color),
    SearchZone(Color),
    GoToZone(Color),
    LeaveBall,
}

pub const PRIMITIVE_NAMES: [&str; 5] = ["search_ball", "catch_the_ball", "search_zone", "go_to_zone", "leave_ball"];

impl PrimitiveCall {
    pub fn name(&self) -> &'static str {
        match self {
            Self::SearchBall(_) => "search_ball",
            Self::CatchTheBall(_) => "catch_the_ball",
            Self::SearchZone(_) => "search_zone",
            Self::GoToZone(_) => "go_to_zone",
            Self::LeaveBall => "leave_ball",
        }
    }

    pub fn color(&self) -> Option<Color> {
        match *self {
            Self::SearchBall(c) | Self::CatchTheBall(c) | Self::SearchZone(c) | Self::GoToZone(c) => Some(c),
            Self::LeaveBall => None,
        }
    }

    fn arity(name: &str) -> Option<usize> {
        match name {
            "leave_ball" => Some(0),
            n if PRIMITIVE_NAMES.contains(&n) => Some(1),
            _ => None,
        }
    }

    fn build(name: &str, args: &[Color]) -> Option<Self> {
        Some(match (name, args) {
            ("search_ball", &[c]) => Self::SearchBall(c),
            ("catch_the_ball", &[c]) => Self::CatchTheBall(c),
            ("search_zone", &[c]) => Self::SearchZone(c),
            ("go_to_zone", &[c]) => Self::GoToZone(c),
            ("leave_ball", &[]) => Self::LeaveBall,
            _ => return None,
        })
    }
}

impl fmt::Display for PrimitiveCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.color() {
            Some(c) => write!(f, "{}('{}')", self.name(), c),
            None => write!(f, "{}()", self.name()),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RawCall {
    name: String,
    args: Vec<Color>,
}

impl From<PrimitiveCall> for RawCall {
    fn from(c: PrimitiveCall) -> Self {
        Self {
            name: c.name().to_string(),
            args: c.color().into_iter().collect(),
        }
    }
}

impl TryFrom<RawCall> for PrimitiveCall {
    type Error = String;

    fn try_from(raw: RawCall) -> Result<Self, String> {
        Self::build(&raw.name, &raw.args).ok_or_else(|| format!("invalid call {}/{}", raw.name, raw.args.len()))
    }
}

/// Parsed plan. Equality ignores the source text.
#[derive(Debug, Clone, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub calls: Vec<PrimitiveCall>,
    pub source_text: String,
}

impl PartialEq for Plan {
    fn eq(&self, other: &Self) -> bool {
        self.calls == other.calls
    }
}

impl Plan {
    pub fn new(calls: Vec<PrimitiveCall>) -> Self {
        let mut plan = Self {
            calls,
            source_text: String::new(),
        };
        plan.source_text = plan.render();
        plan
    }

    /// Canonical text: `search_ball('Orange'); ...; leave_ball();`
    pub fn render(&self) -> String {
        self.calls.iter().map(|c| format!("{c};")).collect::<Vec<_>>().join(" ")
    }
}

impl fmt::Display for Plan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("plan is empty")]
    EmptyPlan,
    #[error("unknown primitive `{name}` at byte {offset}")]
    UnknownPrimitive { name: String, offset: usize },
    #[error("`{name}` takes {expected} argument(s), got {found} (byte {offset})")]
    ArityMismatch {
        name: String,
        expected: usize,
        found: usize,
        offset: usize,
    },
    #[error("unknown color `{color}` at byte {offset}")]
    UnknownColor { color: String, offset: usize },
    #[error("syntax error at byte {offset}: expected {expected}")]
    SyntaxError { offset: usize, expected: &'static str },
}

impl PlanError {
    pub fn offset(&self) -> usize {
        match self {
            Self::EmptyPlan => 0,
            Self::UnknownPrimitive { offset, .. }
            | Self::ArityMismatch { offset, .. }
            | Self::UnknownColor { offset, .. }
            | Self::SyntaxError { offset, .. } => *offset,
        }
    }
}

/// Opening quote and the closers it accepts. Longer openers first.
const QUOTES: [(&str, &[&str]); 6] = [
    ("``", &["\"", "''", "\u{201d}"]),
    ("`", &["'", "\u{2019}"]),
    ("'", &["'"]),
    ("\"", &["\""]),
    ("\u{2018}", &["\u{2019}"]),
    ("\u{201c}", &["\u{201d}"]),
];

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn eat(&mut self, token: &str) -> bool {
        if self.rest().starts_with(token) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, token: &str, expected: &'static str) -> Result<(), PlanError> {
        self.skip_ws();
        if self.eat(token) {
            Ok(())
        } else {
            Err(self.syntax(expected))
        }
    }

    fn syntax(&self, expected: &'static str) -> PlanError {
        PlanError::SyntaxError {
            offset: self.pos,
            expected,
        }
    }

    fn ident(&mut self) -> Result<&str, PlanError> {
        self.skip_ws();
        let start = self.pos;
        let rest = self.rest();
        let len = rest
            .char_indices()
            .find(|&(i, c)| !(c == '_' || c.is_ascii_alphabetic() || (i > 0 && c.is_ascii_digit())))
            .map_or(rest.len(), |(i, _)| i);
        if len == 0 {
            return Err(self.syntax("primitive name"));
        }
        self.pos += len;
        Ok(&self.src[start..self.pos])
    }

    fn color_arg(&mut self) -> Result<Color, PlanError> {
        self.skip_ws();
        let Some(&(open, closers)) = QUOTES.iter().find(|(o, _)| self.rest().starts_with(o)) else {
            return Err(self.syntax("quoted color"));
        };
        self.pos += open.len();
        let start = self.pos;
        let rest = self.rest();
        let (len, close) = closers
            .iter()
            .filter_map(|c| rest.find(c).map(|i| (i, *c)))
            .min_by_key(|&(i, _)| i)
            .ok_or_else(|| self.syntax("closing quote"))?;
        let text = &rest[..len];
        if text.contains([')', ';', '(', '\n']) {
            return Err(self.syntax("closing quote"));
        }
        self.pos += len + close.len();
        text.trim().parse().map_err(|_| PlanError::UnknownColor {
            color: text.to_string(),
            offset: start,
        })
    }

    fn call(&mut self) -> Result<PrimitiveCall, PlanError> {
        self.skip_ws();
        let offset = self.pos;
        let name = self.ident()?.to_string();
        let expected = PrimitiveCall::arity(&name).ok_or_else(|| PlanError::UnknownPrimitive {
            name: name.clone(),
            offset,
        })?;
        self.expect("(", "`(`")?;
        let mut args = Vec::new();
        self.skip_ws();
        if !self.eat(")") {
            loop {
                args.push(self.color_arg()?);
                self.skip_ws();
                if self.eat(")") {
                    break;
                }
                self.expect(",", "`,` or `)`")?;
            }
        }
        PrimitiveCall::build(&name, &args).ok_or(PlanError::ArityMismatch {
            name,
            expected,
            found: args.len(),
            offset,
        })
    }
}

/// Strict parser: the whole input must be a call list.
pub fn parse_plan(text: &str) -> Result<Plan, PlanError> {
    let mut cur = Cursor { src: text, pos: 0 };
    cur.skip_ws();
    if cur.rest().is_empty() {
        return Err(PlanError::EmptyPlan);
    }
    let mut calls = Vec::new();
    loop {
        calls.push(cur.call()?);
        cur.skip_ws();
        if cur.rest().is_empty() {
            break;
        }
        if !cur.eat(";") {
            return Err(cur.syntax("`;`"));
        }
        cur.skip_ws();
        if cur.rest().is_empty() {
            break;
        }
    }
    Ok(Plan {
        calls,
        source_text: text.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "issue", rename_all = "snake_case")]
pub enum PlanIssue {
    UnknownBallColor { call: usize, color: Color },
    UnknownZoneColor { call: usize, color: Color },
    CatchWithoutSearch { call: usize, color: Color },
    LeaveWithoutCatch { call: usize },
    LeaveWithoutGoToZone { call: usize },
}

impl fmt::Display for PlanIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::UnknownBallColor { call, color } => write!(f, "call {call}: unknown ball color {color}"),
            Self::UnknownZoneColor { call, color } => write!(f, "call {call}: unknown zone color {color}"),
            Self::CatchWithoutSearch { call, color } => {
                write!(f, "call {call}: catch {color} without a preceding search")
            }
            Self::LeaveWithoutCatch { call } => write!(f, "call {call}: leave_ball without a preceding catch"),
            Self::LeaveWithoutGoToZone { call } => {
                write!(f, "call {call}: leave_ball without a preceding go_to_zone")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<PlanIssue>,
    pub warnings: Vec<PlanIssue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lines: Vec<String> = self
            .errors
            .iter()
            .map(|e| format!("error: {e}"))
            .chain(self.warnings.iter().map(|w| format!("warning: {w}")))
            .collect();
        f.write_str(&lines.join("; "))
    }
}

/// Grounds a plan against a world. Missing colors are errors, odd
/// sequencing only warns.
pub fn validate_plan(plan: &Plan, world: &WorldState) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut searched: Vec<Color> = Vec::new();
    let mut caught = false;
    let mut went = false;
    for (i, call) in plan.calls.iter().enumerate() {
        match *call {
            PrimitiveCall::SearchBall(c) | PrimitiveCall::CatchTheBall(c) => {
                if !world.balls.iter().any(|b| b.color == c) {
                    report.errors.push(PlanIssue::UnknownBallColor { call: i, color: c });
                }
                if matches!(call, PrimitiveCall::SearchBall(_)) {
                    searched.push(c);
                } else {
                    if !searched.contains(&c) {
                        report.warnings.push(PlanIssue::CatchWithoutSearch { call: i, color: c });
                    }
                    caught = true;
                }
            }
            PrimitiveCall::SearchZone(c) | PrimitiveCall::GoToZone(c) => {
                if !world.zones.iter().any(|z| z.color == c) {
                    report.errors.push(PlanIssue::UnknownZoneColor { call: i, color: c });
                }
                if matches!(call, PrimitiveCall::GoToZone(_)) {
                    went = true;
                }
            }
            PrimitiveCall::LeaveBall => {
                if !caught {
                    report.warnings.push(PlanIssue::LeaveWithoutCatch { call: i });
                }
                if !went {
                    report.warnings.push(PlanIssue::LeaveWithoutGoToZone { call: i });
                }
                caught = false;
                went = false;
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::procgen::{generate_environment, AreaSpec, EnvironmentSpec};
    use proptest::prelude::*;

    const FIVE: &str =
        "search_ball('Orange'); catch_the_ball('Orange'); search_zone('Green'); go_to_zone('Green'); leave_ball();";

    fn five_calls() -> Vec<PrimitiveCall> {
        use PrimitiveCall::*;
        vec![
            SearchBall(Color::Orange),
            CatchTheBall(Color::Orange),
            SearchZone(Color::Green),
            GoToZone(Color::Green),
            LeaveBall,
        ]
    }

    fn item(count: u32, color: Color, kind: ItemKind) -> InventoryItem {
        InventoryItem { count, color, kind }
    }

    #[test]
    fn description_formats() {
        let d = AreaDescription {
            area_index: 1,
            items: vec![
                item(1, Color::Orange, ItemKind::Ball),
                item(1, Color::Red, ItemKind::Zone),
                item(1, Color::Green, ItemKind::Zone),
            ],
            obstacle_count: 5,
        };
        assert_eq!(d.render(), "Area 1 has 1 Orange Ball, 1 Red Zone, 1 Green Zone, 5 obstacles.");
        let empty = AreaDescription {
            area_index: 1,
            items: vec![],
            obstacle_count: 0,
        };
        assert_eq!(empty.render(), "Area 1 has 0 obstacles.");
        let blue = AreaDescription {
            area_index: 2,
            items: vec![item(2, Color::Blue, ItemKind::Ball)],
            obstacle_count: 3,
        };
        assert_eq!(blue.render(), "Area 2 has 2 Blue Balls, 3 obstacles.");
        for d in [d, empty, blue] {
            assert_eq!(parse_area_description(&d.render()), Ok(d));
        }
    }

    #[test]
    fn generated_world_description() {
        let world = generate_environment(&EnvironmentSpec::fetch_and_deliver(7)).unwrap();
        assert_eq!(
            render_world_description(&world),
            "Received areas information: Area 1 has 1 Orange Ball, 1 Red Zone, 1 Green Zone, 5 obstacles."
        );
        let spec = EnvironmentSpec::new(
            3,
            vec![
                AreaSpec::new(6, 6).with_ball(Color::Blue, 2).with_obstacles(1),
                AreaSpec::new(6, 6).with_zone(Color::Red, 1),
            ],
        );
        let world = generate_environment(&spec).unwrap();
        let text = render_world_description(&world);
        assert_eq!(
            text,
            "Received areas information: Area 1 has 2 Blue Balls, 1 obstacles. Area 2 has 1 Red Zone, 0 obstacles."
        );
        assert_eq!(parse_world_description(&text).unwrap().len(), 2);
    }

    #[test]
    fn parses_five_call_plan() {
        assert_eq!(parse_plan(FIVE).unwrap().calls, five_calls());
        let typographic = "search_ball(`Orange'); catch_the_ball(\u{2018}orange\u{2019});\n search_zone(\"Green\") ;go_to_zone(``Green\"); leave_ball( )";
        assert_eq!(parse_plan(typographic).unwrap().calls, five_calls());
        assert_eq!(Plan::new(five_calls()).render(), FIVE);
    }

    #[test]
    fn parse_errors_are_typed() {
        assert_eq!(parse_plan(""), Err(PlanError::EmptyPlan));
        assert_eq!(parse_plan("  \n "), Err(PlanError::EmptyPlan));
        assert_eq!(
            parse_plan("fly_to('Moon');"),
            Err(PlanError::UnknownPrimitive {
                name: "fly_to".into(),
                offset: 0
            })
        );
        assert!(matches!(
            parse_plan("leave_ball('Red')"),
            Err(PlanError::ArityMismatch {
                expected: 0,
                found: 1,
                ..
            })
        ));
        assert!(matches!(
            parse_plan("search_ball()"),
            Err(PlanError::ArityMismatch { expected: 1, found: 0, .. })
        ));
        assert!(matches!(
            parse_plan("search_ball('Red', 'Blue')"),
            Err(PlanError::ArityMismatch { found: 2, .. })
        ));
        assert_eq!(
            parse_plan("go_to_zone('Teal')"),
            Err(PlanError::UnknownColor {
                color: "Teal".into(),
                offset: 12
            })
        );
        assert!(matches!(parse_plan("search_ball(Red)"), Err(PlanError::SyntaxError { offset: 12, .. })));
        assert!(matches!(parse_plan("leave_ball() leave_ball()"), Err(PlanError::SyntaxError { offset: 13, .. })));
        assert!(matches!(parse_plan(";"), Err(PlanError::SyntaxError { offset: 0, .. })));
        assert!(matches!(parse_plan("leave_ball();;"), Err(PlanError::SyntaxError { .. })));
    }

    #[test]
    fn validation() {
        let world = generate_environment(&EnvironmentSpec::fetch_and_deliver(7)).unwrap();
        let ok = validate_plan(&parse_plan(FIVE).unwrap(), &world);
        assert_eq!(ok, ValidationReport::default());

        let purple = validate_plan(&parse_plan("search_ball('Purple')").unwrap(), &world);
        assert_eq!(
            purple.errors,
            vec![PlanIssue::UnknownBallColor {
                call: 0,
                color: Color::Purple
            }]
        );
        assert!(!purple.is_valid());

        let lone = validate_plan(&parse_plan("catch_the_ball('Orange');").unwrap(), &world);
        assert!(lone.is_valid());
        assert_eq!(
            lone.warnings,
            vec![PlanIssue::CatchWithoutSearch {
                call: 0,
                color: Color::Orange
            }]
        );
        let leave = validate_plan(&parse_plan("leave_ball()").unwrap(), &world);
        assert_eq!(leave.warnings.len(), 2);
    }

    #[test]
    fn call_json_shape() {
        let v = serde_json::to_value(PrimitiveCall::GoToZone(Color::Green)).unwrap();
        assert_eq!(v, serde_json::json!({"name": "go_to_zone", "args": ["Green"]}));
        let back: PrimitiveCall = serde_json::from_value(v).unwrap();
        assert_eq!(back, PrimitiveCall::GoToZone(Color::Green));
        assert!(serde_json::from_value::<PrimitiveCall>(serde_json::json!({"name": "leave_ball", "args": ["Red"]})).is_err());
    }

    fn arb_call() -> impl Strategy<Value = PrimitiveCall> {
        let color = proptest::sample::select(Color::ALL.to_vec());
        prop_oneof![
            color.clone().prop_map(PrimitiveCall::SearchBall),
            color.clone().prop_map(PrimitiveCall::CatchTheBall),
            color.clone().prop_map(PrimitiveCall::SearchZone),
            color.prop_map(PrimitiveCall::GoToZone),
            Just(PrimitiveCall::LeaveBall),
        ]
    }

    proptest! {
        #[test]
        fn render_parse_roundtrip(calls in proptest::collection::vec(arb_call(), 1..12)) {
            let plan = Plan::new(calls);
            prop_assert_eq!(parse_plan(&plan.render()).unwrap(), plan);
        }

        #[test]
        fn parser_is_total(s in "\\PC*") {
            match parse_plan(&s) {
                Ok(plan) => prop_assert!(!plan.calls.is_empty()),
                Err(e) => prop_assert!(e.offset() <= s.len()),
            }
        }

        #[test]
        fn description_roundtrip(
            idx in 1usize..50,
            obstacles in 0u32..40,
            items in proptest::collection::vec((1u32..5, 0usize..6, any::<bool>()), 0..6),
        ) {
            let d = AreaDescription {
                area_index: idx,
                items: items
                    .into_iter()
                    .map(|(n, c, b)| item(n, Color::ALL[c], if b { ItemKind::Ball } else { ItemKind::Zone }))
                    .collect(),
                obstacle_count: obstacles,
            };
            prop_assert_eq!(parse_area_description(&d.render()), Ok(d));
        }
    }
}
