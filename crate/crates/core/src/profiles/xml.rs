//! XML form of the profiles.
//!
//! Canonical output uses a fixed element order, two-space indentation, an XML
//! declaration, `\n` line endings, integers for megabyte counts and six
//! fractional digits for every real number. Empty sets are written as empty
//! elements (`<libraries/>`). Absent optional requirements are omitted.
//!
//! ```text
//! computerProfile
//!   nodeId
//!   nonVolatile
//!     os arch memoryMB capacityMarksPerS
//!     libraries { lib* }
//!     hardware { feature* }
//!   volatile
//!     timestamp cpuBusyFraction freeMemoryMB subscribedMarks
//!
//! applicationProfile
//!   appId ipcLevel
//!   requirements
//!     os? arch? minMemoryMB
//!     libraries { lib* }
//!     hardware { feature* }
//!   declaredDemandMarks
//!   history { run { demandMarks wallTimeS nodeId timestamp }* }
//! ```
//!
//! Unknown elements are logged and skipped.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use quick_xml::events::Event;
use quick_xml::Reader;

use super::{
    ApplicationProfile, ComputerProfile, IpcLevel, NonVolatileFacts, ProfileError, RunRecord,
    VolatileSample,
};
use crate::matcher::NonVolatileRequirements;

#[derive(Debug, Default)]
struct Element {
    name: String,
    text: String,
    children: Vec<Element>,
}

fn parse_tree(xml_text: &str) -> Result<Element, ProfileError> {
    let mut reader = Reader::from_str(xml_text);
    reader.config_mut().trim_text(true);
    let mut stack: Vec<Element> = Vec::new();
    let mut root: Option<Element> = None;
    let malformed = |msg: String| ProfileError::MalformedXml(msg);

    loop {
        let pos = reader.buffer_position();
        let event = reader
            .read_event()
            .map_err(|e| malformed(format!("at byte {pos}: {e}")))?;
        match event {
            Event::Start(e) => {
                let name = String::from_utf8_lossy(e.name().as_ref()).into_owned();
                stack.push(Element {
                    name,
                    ..Element::default()
                });
            }
            Event::Empty(e) => {
                let el = Element {
                    name: String::from_utf8_lossy(e.name().as_ref()).into_owned(),
                    ..Element::default()
                };
                match stack.last_mut() {
                    Some(parent) => parent.children.push(el),
                    None if root.is_none() => root = Some(el),
                    None => return Err(malformed("more than one root element".into())),
                }
            }
            Event::End(_) => {
                let el = stack
                    .pop()
                    .ok_or_else(|| malformed("unbalanced end tag".into()))?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(el),
                    None if root.is_none() => root = Some(el),
                    None => return Err(malformed("more than one root element".into())),
                }
            }
            Event::Text(t) => {
                let text = t
                    .unescape()
                    .map_err(|e| malformed(format!("at byte {pos}: {e}")))?;
                match stack.last_mut() {
                    Some(el) => el.text.push_str(&text),
                    None if text.trim().is_empty() => {}
                    None => return Err(malformed("text outside the root element".into())),
                }
            }
            Event::CData(c) => {
                if let Some(el) = stack.last_mut() {
                    el.text.push_str(&String::from_utf8_lossy(&c.into_inner()));
                }
            }
            Event::Eof => break,
            // declarations, comments, processing instructions, doctypes
            _ => {}
        }
    }
    if let Some(open) = stack.last() {
        return Err(malformed(format!("unclosed element <{}>", open.name)));
    }
    root.ok_or_else(|| malformed("no root element".into()))
}

struct Ctx<'w> {
    warnings: &'w mut Vec<String>,
}

impl Ctx<'_> {
    fn check_known(&mut self, el: &Element, known: &[&str]) {
        for child in &el.children {
            if !known.contains(&child.name.as_str()) {
                let msg = format!("ignoring unknown element <{}> in <{}>", child.name, el.name);
                log::warn!("{msg}");
                self.warnings.push(msg);
            }
        }
    }
}

fn child<'a>(el: &'a Element, name: &str) -> Option<&'a Element> {
    el.children.iter().find(|c| c.name == name)
}

fn required<'a>(el: &'a Element, name: &str) -> Result<&'a Element, ProfileError> {
    let mut found = el.children.iter().filter(|c| c.name == name);
    let first = found
        .next()
        .ok_or_else(|| ProfileError::schema(name, format!("missing from <{}>", el.name)))?;
    if found.next().is_some() {
        return Err(ProfileError::schema(name, "appears more than once"));
    }
    Ok(first)
}

fn text_of(el: &Element) -> Result<String, ProfileError> {
    let t = el.text.trim();
    if t.is_empty() {
        return Err(ProfileError::schema(&el.name, "empty"));
    }
    Ok(t.to_string())
}

fn real_of(el: &Element) -> Result<f64, ProfileError> {
    let t = text_of(el)?;
    let v: f64 = t
        .parse()
        .map_err(|_| ProfileError::schema(&el.name, format!("`{t}` is not a number")))?;
    if !v.is_finite() {
        return Err(ProfileError::schema(&el.name, "must be finite"));
    }
    Ok(v)
}

fn int_of(el: &Element) -> Result<u64, ProfileError> {
    let t = text_of(el)?;
    t.parse()
        .map_err(|_| ProfileError::schema(&el.name, format!("`{t}` is not a non-negative integer")))
}

fn string_set(
    ctx: &mut Ctx<'_>,
    parent: &Element,
    set_name: &str,
    item: &str,
) -> Result<BTreeSet<String>, ProfileError> {
    let mut out = BTreeSet::new();
    let Some(set) = child(parent, set_name) else {
        return Ok(out);
    };
    ctx.check_known(set, &[item]);
    for el in set.children.iter().filter(|c| c.name == item) {
        if !out.insert(text_of(el)?) {
            return Err(ProfileError::schema(
                set_name,
                format!("duplicate <{item}> `{}`", el.text.trim()),
            ));
        }
    }
    Ok(out)
}

fn expect_root(root: &Element, name: &str) -> Result<(), ProfileError> {
    if root.name != name {
        return Err(ProfileError::schema(
            name,
            format!("expected root <{name}>, found <{}>", root.name),
        ));
    }
    Ok(())
}

/// Parses a computer profile, returning it with any warnings about skipped elements.
pub fn parse_computer_profile_with_warnings(
    xml_text: &str,
) -> Result<(ComputerProfile, Vec<String>), ProfileError> {
    let root = parse_tree(xml_text)?;
    expect_root(&root, "computerProfile")?;
    let mut warnings = Vec::new();
    let mut ctx = Ctx {
        warnings: &mut warnings,
    };
    ctx.check_known(&root, &["nodeId", "nonVolatile", "volatile"]);

    let node_id = text_of(required(&root, "nodeId")?)?;

    let nv = required(&root, "nonVolatile")?;
    ctx.check_known(
        nv,
        &["os", "arch", "memoryMB", "capacityMarksPerS", "libraries", "hardware"],
    );
    let nonvolatile = NonVolatileFacts {
        os: text_of(required(nv, "os")?)?,
        arch: text_of(required(nv, "arch")?)?,
        memory_mb: int_of(required(nv, "memoryMB")?)?,
        capacity_marks_per_s: real_of(required(nv, "capacityMarksPerS")?)?,
        libraries: string_set(&mut ctx, nv, "libraries", "lib")?,
        hardware_features: string_set(&mut ctx, nv, "hardware", "feature")?,
    };

    let vol = required(&root, "volatile")?;
    ctx.check_known(
        vol,
        &["timestamp", "cpuBusyFraction", "freeMemoryMB", "subscribedMarks"],
    );
    let volatile = VolatileSample {
        timestamp: real_of(required(vol, "timestamp")?)?,
        cpu_busy_fraction: real_of(required(vol, "cpuBusyFraction")?)?,
        free_memory_mb: int_of(required(vol, "freeMemoryMB")?)?,
        subscribed_marks: real_of(required(vol, "subscribedMarks")?)?,
    };

    let profile = ComputerProfile {
        node_id,
        nonvolatile,
        volatile,
    };
    profile.validate()?;
    Ok((profile, warnings))
}

pub fn parse_computer_profile(xml_text: &str) -> Result<ComputerProfile, ProfileError> {
    parse_computer_profile_with_warnings(xml_text).map(|(p, _)| p)
}

pub fn parse_application_profile_with_warnings(
    xml_text: &str,
) -> Result<(ApplicationProfile, Vec<String>), ProfileError> {
    let root = parse_tree(xml_text)?;
    expect_root(&root, "applicationProfile")?;
    let mut warnings = Vec::new();
    let mut ctx = Ctx {
        warnings: &mut warnings,
    };
    ctx.check_known(
        &root,
        &["appId", "ipcLevel", "requirements", "declaredDemandMarks", "history"],
    );

    let app_id = text_of(required(&root, "appId")?)?;
    let ipc_el = required(&root, "ipcLevel")?;
    let ipc_text = text_of(ipc_el)?;
    let ipc_level = IpcLevel::parse(&ipc_text).ok_or_else(|| {
        ProfileError::schema("ipcLevel", format!("`{ipc_text}` is not none|light|heavy"))
    })?;

    let req = required(&root, "requirements")?;
    ctx.check_known(
        req,
        &["os", "arch", "minMemoryMB", "libraries", "hardware"],
    );
    let optional_text = |name: &str| -> Result<Option<String>, ProfileError> {
        match child(req, name) {
            Some(el) if el.text.trim().is_empty() => Ok(None),
            Some(el) => Ok(Some(text_of(el)?)),
            None => Ok(None),
        }
    };
    let requirements = NonVolatileRequirements {
        os: optional_text("os")?,
        arch: optional_text("arch")?,
        min_memory_mb: int_of(required(req, "minMemoryMB")?)?,
        required_libraries: string_set(&mut ctx, req, "libraries", "lib")?,
        required_hardware: string_set(&mut ctx, req, "hardware", "feature")?,
    };

    let declared_demand_marks = real_of(required(&root, "declaredDemandMarks")?)?;

    let mut history = Vec::new();
    if let Some(hist) = child(&root, "history") {
        ctx.check_known(hist, &["run"]);
        for run in hist.children.iter().filter(|c| c.name == "run") {
            ctx.check_known(run, &["demandMarks", "wallTimeS", "nodeId", "timestamp"]);
            history.push(RunRecord {
                demand_marks: real_of(required(run, "demandMarks")?)?,
                wall_time_s: real_of(required(run, "wallTimeS")?)?,
                node_id: text_of(required(run, "nodeId")?)?,
                timestamp: real_of(required(run, "timestamp")?)?,
            });
        }
    }

    let profile = ApplicationProfile {
        app_id,
        ipc_level,
        requirements,
        declared_demand_marks,
        history,
    };
    profile.validate()?;
    Ok((profile, warnings))
}

pub fn parse_application_profile(xml_text: &str) -> Result<ApplicationProfile, ProfileError> {
    parse_application_profile_with_warnings(xml_text).map(|(p, _)| p)
}

struct Writer {
    out: String,
    depth: usize,
}

impl Writer {
    fn new() -> Self {
        Writer {
            out: String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"),
            depth: 0,
        }
    }

    fn indent(&mut self) {
        for _ in 0..self.depth {
            self.out.push_str("  ");
        }
    }

    fn open(&mut self, name: &str) {
        self.indent();
        let _ = writeln!(self.out, "<{name}>");
        self.depth += 1;
    }

    fn close(&mut self, name: &str) {
        self.depth -= 1;
        self.indent();
        let _ = writeln!(self.out, "</{name}>");
    }

    fn text(&mut self, name: &str, value: &str) {
        self.indent();
        let _ = writeln!(self.out, "<{name}>{}</{name}>", quick_xml::escape::escape(value));
    }

    fn real(&mut self, name: &str, value: f64) {
        self.text(name, &format!("{value:.6}"));
    }

    fn int(&mut self, name: &str, value: u64) {
        self.text(name, &value.to_string());
    }

    fn set(&mut self, name: &str, item: &str, values: &BTreeSet<String>) {
        if values.is_empty() {
            self.indent();
            let _ = writeln!(self.out, "<{name}/>");
            return;
        }
        self.open(name);
        for v in values {
            self.text(item, v);
        }
        self.close(name);
    }
}

/// Canonical XML for a computer profile. Output is byte-stable for equal inputs.
pub fn serialize_computer_profile(p: &ComputerProfile) -> String {
    let mut w = Writer::new();
    w.open("computerProfile");
    w.text("nodeId", &p.node_id);
    w.open("nonVolatile");
    w.text("os", &p.nonvolatile.os);
    w.text("arch", &p.nonvolatile.arch);
    w.int("memoryMB", p.nonvolatile.memory_mb);
    w.real("capacityMarksPerS", p.nonvolatile.capacity_marks_per_s);
    w.set("libraries", "lib", &p.nonvolatile.libraries);
    w.set("hardware", "feature", &p.nonvolatile.hardware_features);
    w.close("nonVolatile");
    w.open("volatile");
    w.real("timestamp", p.volatile.timestamp);
    w.real("cpuBusyFraction", p.volatile.cpu_busy_fraction);
    w.int("freeMemoryMB", p.volatile.free_memory_mb);
    w.real("subscribedMarks", p.volatile.subscribed_marks);
    w.close("volatile");
    w.close("computerProfile");
    w.out
}

pub fn serialize_application_profile(p: &ApplicationProfile) -> String {
    let mut w = Writer::new();
    w.open("applicationProfile");
    w.text("appId", &p.app_id);
    w.text("ipcLevel", p.ipc_level.as_str());
    w.open("requirements");
    if let Some(os) = &p.requirements.os {
        w.text("os", os);
    }
    if let Some(arch) = &p.requirements.arch {
        w.text("arch", arch);
    }
    w.int("minMemoryMB", p.requirements.min_memory_mb);
    w.set("libraries", "lib", &p.requirements.required_libraries);
    w.set("hardware", "feature", &p.requirements.required_hardware);
    w.close("requirements");
    w.real("declaredDemandMarks", p.declared_demand_marks);
    if p.history.is_empty() {
        w.indent();
        w.out.push_str("<history/>\n");
    } else {
        w.open("history");
        for run in &p.history {
            w.open("run");
            w.real("demandMarks", run.demand_marks);
            w.real("wallTimeS", run.wall_time_s);
            w.text("nodeId", &run.node_id);
            w.real("timestamp", run.timestamp);
            w.close("run");
        }
        w.close("history");
    }
    w.close("applicationProfile");
    w.out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MINIMAL: &str = r#"<?xml version="1.0"?>
<computerProfile>
  <nodeId>n1</nodeId>
  <nonVolatile>
    <os>linux</os><arch>x86</arch>
    <memoryMB>1024</memoryMB>
    <capacityMarksPerS>100</capacityMarksPerS>
  </nonVolatile>
  <volatile>
    <timestamp>0</timestamp><cpuBusyFraction>0</cpuBusyFraction>
    <freeMemoryMB>1024</freeMemoryMB><subscribedMarks>0</subscribedMarks>
  </volatile>
</computerProfile>"#;

    #[test]
    fn minimal_document_maps_fields() {
        let p = parse_computer_profile(MINIMAL).unwrap();
        assert_eq!(p.node_id, "n1");
        assert_eq!(p.nonvolatile.os, "linux");
        assert_eq!(p.nonvolatile.memory_mb, 1024);
        assert_eq!(p.nonvolatile.capacity_marks_per_s, 100.0);
        assert!(p.nonvolatile.libraries.is_empty());
    }

    #[test]
    fn missing_capacity_is_named() {
        let doc = MINIMAL.replace("<capacityMarksPerS>100</capacityMarksPerS>", "");
        let err = parse_computer_profile(&doc).unwrap_err();
        assert_eq!(err.element(), Some("capacityMarksPerS"));
    }

    #[test]
    fn out_of_range_value_is_named() {
        let doc = MINIMAL.replace(
            "<cpuBusyFraction>0</cpuBusyFraction>",
            "<cpuBusyFraction>1.5</cpuBusyFraction>",
        );
        assert_eq!(
            parse_computer_profile(&doc).unwrap_err().element(),
            Some("cpuBusyFraction")
        );
        let doc = MINIMAL.replace("<memoryMB>1024</memoryMB>", "<memoryMB>-4</memoryMB>");
        assert_eq!(
            parse_computer_profile(&doc).unwrap_err().element(),
            Some("memoryMB")
        );
    }

    #[test]
    fn malformed_xml() {
        for doc in ["<computerProfile><nodeId>x</computerProfile>", "", "<a></b>", "<a/><b/>"] {
            assert!(
                matches!(parse_computer_profile(doc), Err(ProfileError::MalformedXml(_))),
                "{doc:?}"
            );
        }
    }

    #[test]
    fn unknown_elements_warn_and_are_ignored() {
        let doc = MINIMAL.replace("<nodeId>n1</nodeId>", "<nodeId>n1</nodeId><rack>r7</rack>");
        let (p, warnings) = parse_computer_profile_with_warnings(&doc).unwrap();
        assert_eq!(p, parse_computer_profile(MINIMAL).unwrap());
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("rack"));
    }

    #[test]
    fn duplicate_library_is_rejected() {
        let doc = MINIMAL.replace(
            "</capacityMarksPerS>",
            "</capacityMarksPerS><libraries><lib>a</lib><lib>a</lib></libraries>",
        );
        assert_eq!(
            parse_computer_profile(&doc).unwrap_err().element(),
            Some("libraries")
        );
    }

    #[test]
    fn empty_sets_serialize_as_empty_elements() {
        let p = parse_computer_profile(MINIMAL).unwrap();
        let xml = serialize_computer_profile(&p);
        assert!(xml.contains("    <libraries/>\n"));
        assert!(xml.contains("    <hardware/>\n"));
        assert!(xml.contains("<capacityMarksPerS>100.000000</capacityMarksPerS>"));
        assert_eq!(xml, serialize_computer_profile(&p));
    }

    #[test]
    fn text_is_escaped() {
        let mut p = parse_computer_profile(MINIMAL).unwrap();
        p.node_id = "a<b&c".into();
        let xml = serialize_computer_profile(&p);
        assert!(xml.contains("<nodeId>a&lt;b&amp;c</nodeId>"));
        assert_eq!(parse_computer_profile(&xml).unwrap(), p);
    }

    fn app_doc(history: &str) -> String {
        format!(
            r#"<applicationProfile>
  <appId>abc</appId><ipcLevel>light</ipcLevel>
  <requirements><os>linux</os><minMemoryMB>256</minMemoryMB>
    <libraries><lib>blas</lib></libraries></requirements>
  <declaredDemandMarks>200</declaredDemandMarks>
  {history}
</applicationProfile>"#
        )
    }

    fn run(marks: f64, t: f64) -> String {
        format!(
            "<run><demandMarks>{marks}</demandMarks><wallTimeS>1</wallTimeS><nodeId>n</nodeId><timestamp>{t}</timestamp></run>"
        )
    }

    #[test]
    fn application_with_empty_history() {
        let p = parse_application_profile(&app_doc("<history/>")).unwrap();
        assert!(p.history.is_empty());
        assert_eq!(p.ipc_level, IpcLevel::Light);
        assert_eq!(p.requirements.os.as_deref(), Some("linux"));
        assert_eq!(p.requirements.arch, None);
        let p2 = parse_application_profile(&app_doc("")).unwrap();
        assert_eq!(p, p2);
    }

    #[test]
    fn application_history_order_preserved() {
        let h = format!("<history>{}{}{}</history>", run(90.0, 1.0), run(110.0, 2.0), run(100.0, 3.0));
        let p = parse_application_profile(&app_doc(&h)).unwrap();
        let marks: Vec<f64> = p.history.iter().map(|r| r.demand_marks).collect();
        assert_eq!(marks, vec![90.0, 110.0, 100.0]);
        let again = parse_application_profile(&serialize_application_profile(&p)).unwrap();
        assert_eq!(again, p);
    }

    #[test]
    fn bad_ipc_level_is_named() {
        let doc = app_doc("").replace("light", "chatty");
        assert_eq!(
            parse_application_profile(&doc).unwrap_err().element(),
            Some("ipcLevel")
        );
    }

    #[test]
    fn wrong_root_is_schema_violation() {
        let err = parse_application_profile(MINIMAL).unwrap_err();
        assert_eq!(err.element(), Some("applicationProfile"));
    }

    // Reals with at most six fractional digits survive the canonical form exactly.
    fn micro(max: u64) -> impl Strategy<Value = f64> {
        (0..=max).prop_map(|n| n as f64 / 1e6)
    }

    fn micro_pos(max: u64) -> impl Strategy<Value = f64> {
        (1..=max).prop_map(|n| n as f64 / 1e6)
    }

    fn name() -> impl Strategy<Value = String> {
        "[a-zA-Z0-9]([a-zA-Z0-9_<&>. -]{0,7}[a-zA-Z0-9])?"
    }

    pub(crate) fn arb_computer_profile() -> impl Strategy<Value = ComputerProfile> {
        (
            name(),
            prop::sample::select(vec!["linux", "windows", "solaris"]),
            prop::sample::select(vec!["x86", "sparc"]),
            1u64..1 << 20,
            micro_pos(10_000_000_000),
            prop::collection::btree_set(name(), 0..4),
            prop::collection::btree_set(name(), 0..3),
            micro(10_000_000_000),
            micro(1_000_000),
            micro(1_000_000_000_000),
        )
            .prop_flat_map(|(id, os, arch, mem, cap, libs, hw, ts, busy, sub)| {
                (0..=mem).prop_map(move |free| ComputerProfile {
                    node_id: id.clone(),
                    nonvolatile: NonVolatileFacts {
                        os: os.into(),
                        arch: arch.into(),
                        memory_mb: mem,
                        capacity_marks_per_s: cap,
                        libraries: libs.clone(),
                        hardware_features: hw.clone(),
                    },
                    volatile: VolatileSample {
                        timestamp: ts,
                        cpu_busy_fraction: busy,
                        free_memory_mb: free,
                        subscribed_marks: sub,
                    },
                })
            })
    }

    fn arb_app_profile() -> impl Strategy<Value = ApplicationProfile> {
        (
            "[0-9a-f]{64}",
            prop::sample::select(vec![IpcLevel::None, IpcLevel::Light, IpcLevel::Heavy]),
            prop::option::of(prop::sample::select(vec!["linux", "windows"])),
            prop::option::of(prop::sample::select(vec!["x86", "sparc"])),
            0u64..1 << 20,
            prop::collection::btree_set(name(), 0..3),
            micro_pos(1_000_000_000),
            prop::collection::vec((micro_pos(1_000_000_000), micro_pos(1_000_000), name(), micro(1_000_000)), 0..5),
        )
            .prop_map(|(id, ipc, os, arch, mem, libs, declared, runs)| {
                let mut t = 0.0;
                let history = runs
                    .into_iter()
                    .map(|(m, w, n, dt)| {
                        t += dt;
                        RunRecord {
                            demand_marks: m,
                            wall_time_s: w,
                            node_id: n,
                            timestamp: (t * 1e6_f64).round() / 1e6,
                        }
                    })
                    .collect();
                ApplicationProfile {
                    app_id: id,
                    ipc_level: ipc,
                    requirements: NonVolatileRequirements {
                        os: os.map(String::from),
                        arch: arch.map(String::from),
                        min_memory_mb: mem,
                        required_libraries: libs,
                        required_hardware: Default::default(),
                    },
                    declared_demand_marks: declared,
                    history,
                }
            })
    }

    proptest! {
        #[test]
        fn computer_round_trip(p in arb_computer_profile()) {
            let xml = serialize_computer_profile(&p);
            let back = parse_computer_profile(&xml).unwrap();
            prop_assert_eq!(&back, &p);
            prop_assert_eq!(serialize_computer_profile(&back), xml);
        }

        #[test]
        fn application_round_trip(p in arb_app_profile()) {
            let xml = serialize_application_profile(&p);
            let back = parse_application_profile(&xml).unwrap();
            prop_assert_eq!(&back, &p);
        }
    }
}
