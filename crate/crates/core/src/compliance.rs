//! Declarative rule catalog and evaluation of facility counts against it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{schema_error, Error, Result};
use crate::model::FacilityType;

pub const BUILTIN_CATALOG: &str = include_str!("../data/catalog.ncc.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildingContext {
    pub building_class: u8,
    #[serde(default)]
    pub dwellings: u32,
    pub floors: u32,
    #[serde(default)]
    pub occupant_load: u32,
    #[serde(default)]
    pub residents_without_private_amenities: u32,
    #[serde(default)]
    pub long_term_accommodation: bool,
    #[serde(default)]
    pub use_tags: BTreeSet<String>,
    /// Standard spaces to base the accessible-parking ratio on. See
    /// [`BuildingContext::with_parking_from`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standard_parking_spaces: Option<u32>,
}

impl BuildingContext {
    pub fn new(building_class: u8, floors: u32) -> Result<Self> {
        let ctx = Self {
            building_class,
            dwellings: 0,
            floors,
            occupant_load: 0,
            residents_without_private_amenities: 0,
            long_term_accommodation: false,
            use_tags: BTreeSet::new(),
            standard_parking_spaces: None,
        };
        ctx.validate()?;
        Ok(ctx)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ctx: Self =
            serde_json::from_slice(&bytes).map_err(|e| schema_error("building context", e))?;
        ctx.validate()?;
        Ok(ctx)
    }

    /// Fills `standard_parking_spaces` from an enumerated `parking-standard`
    /// count when the context does not state it.
    pub fn with_parking_from(mut self, results: &BTreeMap<FacilityType, u32>) -> Self {
        if self.standard_parking_spaces.is_none() {
            self.standard_parking_spaces = results.get(&FacilityType::ParkingStandard).copied();
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=9).contains(&self.building_class) {
            return Err(Error::validation(format!(
                "building class {} outside 1..=9",
                self.building_class
            )));
        }
        if self.floors == 0 {
            return Err(Error::validation("a building has at least one floor"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Basis {
    Residents,
    OccupantLoad,
    StandardParking,
    Dwellings,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Divisor {
    Fixed { per: u32 },
    Param { per_param: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Quantity {
    Constant {
        n: u32,
    },
    PerDwelling {
        per: u32,
        #[serde(default)]
        at_least: u32,
    },
    PerFloor {
        per: u32,
    },
    /// `max(at_least, ceil(basis / divisor))`.
    Ratio {
        basis: Basis,
        #[serde(flatten)]
        divisor: Divisor,
        #[serde(default)]
        at_least: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub long_term: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub any_tag: Vec<String>,
}

impl Condition {
    fn holds(&self, ctx: &BuildingContext) -> bool {
        self.long_term
            .is_none_or(|lt| lt == ctx.long_term_accommodation)
            && (self.any_tag.is_empty() || self.any_tag.iter().any(|t| ctx.use_tags.contains(t)))
    }

    fn describe(&self) -> String {
        let mut parts = Vec::new();
        if let Some(lt) = self.long_term {
            parts.push(format!("long_term_accommodation = {lt}"));
        }
        if !self.any_tag.is_empty() {
            parts.push(format!("use tag in {:?}", self.any_tag));
        }
        parts.join(" and ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub rule_id: String,
    pub facility: FacilityType,
    pub classes: BTreeSet<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub when: Option<Condition>,
    pub quantity: Quantity,
    pub citation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NotApplicable {
    pub facility: FacilityType,
    pub classes: BTreeSet<u8>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Catalog {
    pub catalog: String,
    pub version: String,
    #[serde(default)]
    pub parameters: BTreeMap<String, u32>,
    pub rules: Vec<Rule>,
    #[serde(default)]
    pub not_applicable: Vec<NotApplicable>,
}

/// What the catalog says about one (class, facility) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Coverage<'a> {
    Rules(Vec<&'a Rule>),
    NotApplicable(&'a str),
}

/// Outcome of [`required_quantity`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Requirement {
    Required { n: u32 },
    NotApplicable { reason: String },
}

impl Requirement {
    pub fn count(&self) -> u32 {
        match self {
            Requirement::Required { n } => *n,
            Requirement::NotApplicable { .. } => 0,
        }
    }
}

impl Catalog {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_CATALOG).expect("builtin catalog is valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let catalog: Self =
            serde_json::from_str(text).map_err(|e| schema_error("rule catalog", e))?;
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Overrides a named ratio parameter.
    pub fn with_parameter(mut self, name: &str, value: u32) -> Result<Self> {
        if !self.parameters.contains_key(name) {
            return Err(Error::Config(format!("catalog has no parameter {name:?}")));
        }
        self.parameters.insert(name.to_string(), value);
        self.validate()?;
        Ok(self)
    }

    pub fn rule(&self, rule_id: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.rule_id == rule_id)
    }

    pub fn coverage(&self, class: u8, facility: FacilityType) -> Option<Coverage<'_>> {
        let rules: Vec<&Rule> = self
            .rules
            .iter()
            .filter(|r| r.facility == facility && r.classes.contains(&class))
            .collect();
        if !rules.is_empty() {
            return Some(Coverage::Rules(rules));
        }
        self.not_applicable
            .iter()
            .find(|na| na.facility == facility && na.classes.contains(&class))
            .map(|na| Coverage::NotApplicable(&na.reason))
    }

    /// Unique ids, classes in 1..=9, positive divisors, and every
    /// (class, facility) pair covered by a rule or an explicit marker.
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for rule in &self.rules {
            if !ids.insert(&rule.rule_id) {
                return Err(Error::Config(format!(
                    "duplicate rule id {:?}",
                    rule.rule_id
                )));
            }
            if rule.classes.is_empty() || rule.classes.iter().any(|c| !(1..=9).contains(c)) {
                return Err(Error::Config(format!(
                    "rule {} has invalid classes",
                    rule.rule_id
                )));
            }
            if let Quantity::Ratio { divisor, .. } = &rule.quantity {
                let per = self
                    .divisor(divisor)
                    .map_err(|e| Error::Config(format!("rule {}: {e}", rule.rule_id)))?;
                if per == 0 {
                    return Err(Error::Config(format!(
                        "rule {} divides by zero",
                        rule.rule_id
                    )));
                }
            }
        }
        for class in 1..=9u8 {
            for facility in FacilityType::ALL {
                let has_rule = self
                    .rules
                    .iter()
                    .any(|r| r.facility == facility && r.classes.contains(&class));
                let marked = self
                    .not_applicable
                    .iter()
                    .any(|na| na.facility == facility && na.classes.contains(&class));
                if has_rule && marked {
                    return Err(Error::Config(format!(
                        "class {class} {facility} has both rules and a not-applicable marker"
                    )));
                }
                if !has_rule && !marked {
                    return Err(Error::Config(format!(
                        "class {class} {facility} is not covered"
                    )));
                }
            }
        }
        Ok(())
    }

    fn divisor(&self, divisor: &Divisor) -> Result<u32> {
        match divisor {
            Divisor::Fixed { per } => Ok(*per),
            Divisor::Param { per_param } => self
                .parameters
                .get(per_param)
                .copied()
                .ok_or_else(|| Error::Config(format!("unknown parameter {per_param:?}"))),
        }
    }
}

pub fn ceil_div(n: u32, per: u32) -> u32 {
    n.div_ceil(per)
}

/// Required count of `rule` for `ctx`. `standard_parking` is the basis for
/// parking ratios.
pub fn required_quantity(
    catalog: &Catalog,
    rule: &Rule,
    ctx: &BuildingContext,
    standard_parking: u32,
) -> Requirement {
    if !rule.classes.contains(&ctx.building_class) {
        return Requirement::NotApplicable {
            reason: format!("rule does not cover class {}", ctx.building_class),
        };
    }
    if let Some(cond) = &rule.when {
        if !cond.holds(ctx) {
            return Requirement::NotApplicable {
                reason: format!("condition not met: {}", cond.describe()),
            };
        }
    }
    let n = match &rule.quantity {
        Quantity::Constant { n } => *n,
        Quantity::PerDwelling { per, at_least } => {
            ctx.dwellings.saturating_mul(*per).max(*at_least)
        }
        Quantity::PerFloor { per } => ctx.floors.saturating_mul(*per),
        Quantity::Ratio {
            basis,
            divisor,
            at_least,
        } => {
            let base = match basis {
                Basis::Residents => ctx.residents_without_private_amenities,
                Basis::OccupantLoad => ctx.occupant_load,
                Basis::StandardParking => standard_parking,
                Basis::Dwellings => ctx.dwellings,
            };
            // validate() guarantees the divisor resolves and is non-zero
            let per = catalog.divisor(divisor).unwrap_or(1).max(1);
            ceil_div(base, per).max(*at_least)
        }
    };
    Requirement::Required { n }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub rule_id: String,
    pub facility: FacilityType,
    pub required: u32,
    pub provided: u32,
    pub pass: bool,
    pub shortfall: u32,
    pub citation: String,
}

impl ReportEntry {
    fn new(rule: &Rule, required: u32, provided: u32) -> Self {
        Self {
            rule_id: rule.rule_id.clone(),
            facility: rule.facility,
            required,
            provided,
            pass: provided >= required,
            shortfall: required.saturating_sub(provided),
            citation: rule.citation.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedEntry {
    pub subject: String,
    pub facility: FacilityType,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplianceReport {
    pub catalog: String,
    pub building_class: u8,
    pub overall_pass: bool,
    pub entries: Vec<ReportEntry>,
    pub not_applicable: Vec<SkippedEntry>,
    pub warnings: Vec<String>,
}

impl ComplianceReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn failures(&self) -> impl Iterator<Item = &ReportEntry> {
        self.entries.iter().filter(|e| !e.pass)
    }

    pub fn to_table(&self) -> String {
        let width = self
            .entries
            .iter()
            .map(|e| e.rule_id.len())
            .chain(std::iter::once(4))
            .max()
            .unwrap_or(4);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "class {} against {}",
            self.building_class, self.catalog
        );
        let _ = writeln!(
            out,
            "{:<width$}  {:<18}  {:>8}  {:>8}  {:>9}  result",
            "rule", "facility", "required", "provided", "shortfall"
        );
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{:<width$}  {:<18}  {:>8}  {:>8}  {:>9}  {}",
                e.rule_id,
                e.facility.as_str(),
                e.required,
                e.provided,
                e.shortfall,
                if e.pass { "pass" } else { "FAIL" }
            );
        }
        for s in &self.not_applicable {
            let _ = writeln!(out, "n/a  {} ({}): {}", s.subject, s.facility, s.reason);
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        let _ = writeln!(
            out,
            "overall: {}",
            if self.overall_pass { "PASS" } else { "FAIL" }
        );
        out
    }
}

/// Checks enumerated counts against every rule covering the context's class.
/// Facilities without a count are treated as zero and reported as a data gap.
pub fn evaluate(
    results: &BTreeMap<FacilityType, u32>,
    ctx: &BuildingContext,
    catalog: &Catalog,
) -> Result<ComplianceReport> {
    ctx.validate()?;
    let standard_parking = ctx.standard_parking_spaces.unwrap_or(0);
    let mut entries = Vec::new();
    let mut not_applicable = Vec::new();
    let mut warnings = Vec::new();
    let ratio_on_parking = |r: &Rule| {
        matches!(
            r.quantity,
            Quantity::Ratio {
                basis: Basis::StandardParking,
                ..
            }
        ) && r.classes.contains(&ctx.building_class)
    };
    if ctx.standard_parking_spaces.is_none() && catalog.rules.iter().any(ratio_on_parking) {
        warnings.push("context gives no standard parking spaces; parking ratios use 0".to_string());
    }
    let mut gaps = BTreeSet::new();
    for facility in FacilityType::ALL {
        match catalog.coverage(ctx.building_class, facility) {
            Some(Coverage::Rules(rules)) => {
                for rule in rules {
                    match required_quantity(catalog, rule, ctx, standard_parking) {
                        Requirement::Required { n } => {
                            let provided = match results.get(&facility) {
                                Some(&p) => p,
                                None => {
                                    gaps.insert(facility);
                                    0
                                }
                            };
                            entries.push(ReportEntry::new(rule, n, provided));
                        }
                        Requirement::NotApplicable { reason } => {
                            not_applicable.push(SkippedEntry {
                                subject: rule.rule_id.clone(),
                                facility,
                                reason,
                            })
                        }
                    }
                }
            }
            Some(Coverage::NotApplicable(reason)) => not_applicable.push(SkippedEntry {
                subject: format!("class {}", ctx.building_class),
                facility,
                reason: reason.to_string(),
            }),
            None => {
                return Err(Error::Config(format!(
                    "catalog does not cover class {} {facility}",
                    ctx.building_class
                )))
            }
        }
    }
    for facility in gaps {
        warnings.push(format!("no count for {facility}; treated as 0 provided"));
    }
    Ok(ComplianceReport {
        catalog: format!("{} v{}", catalog.catalog, catalog.version),
        building_class: ctx.building_class,
        overall_pass: entries.iter().all(|e| e.pass),
        entries,
        not_applicable,
        warnings,
    })
}
