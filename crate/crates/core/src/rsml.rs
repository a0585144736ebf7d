//! Root System Markup Language writer and parser for the skeleton
//! subset {rsml, metadata, scene, plant, root, geometry, polyline,
//! point}. Coordinates are in mm with origin at the ROI top-left.

use std::io::Cursor;

use quick_xml::events::{BytesDecl, BytesEnd, BytesStart, BytesText, Event};
use quick_xml::{Reader, Writer};

use crate::error::{PipelineError, Result};
use crate::graph::RootGraph;
use crate::stats::fmt_sig;

#[derive(Debug, Clone, PartialEq)]
pub struct RsmlMetadata {
    pub version: String,
    pub unit: String,
    pub resolution_mm_per_px: f64,
    pub last_capture_hours: f64,
    pub software: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RsmlRoot {
    pub id: String,
    /// (x, y) in mm
    pub polyline: Vec<(f64, f64)>,
    pub children: Vec<RsmlRoot>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RsmlDocument {
    pub metadata: RsmlMetadata,
    pub plant_id: String,
    pub roots: Vec<RsmlRoot>,
}

/// Builds the document for one plant's classified final-frame graph.
pub fn document_from_graph(
    graph: &RootGraph,
    plant_id: &str,
    capture_hours: f64,
) -> Result<RsmlDocument> {
    let main = graph.main_polyline();
    if main.len() < 2 {
        return Err(PipelineError::Rsml(
            "graph has no classified main root".into(),
        ));
    }
    let s = graph.mm_per_pixel;
    let to_mm = |poly: &[(usize, usize)]| -> Vec<(f64, f64)> {
        poly.iter().map(|&(x, y)| (x as f64 * s, y as f64 * s)).collect()
    };
    let children = graph
        .laterals()
        .iter()
        .enumerate()
        .filter(|(_, l)| l.polyline.len() >= 2)
        .map(|(i, l)| RsmlRoot {
            id: format!("{plant_id}.L{}", i + 1),
            polyline: to_mm(&l.polyline),
            children: Vec::new(),
        })
        .collect();
    Ok(RsmlDocument {
        metadata: RsmlMetadata {
            version: "1.0".into(),
            unit: "mm".into(),
            resolution_mm_per_px: s,
            last_capture_hours: capture_hours,
            software: "rootpipe".into(),
        },
        plant_id: plant_id.into(),
        roots: vec![RsmlRoot {
            id: format!("{plant_id}.M"),
            polyline: to_mm(&main),
            children,
        }],
    })
}

fn write_root(w: &mut Writer<Cursor<Vec<u8>>>, root: &RsmlRoot) -> Result<()> {
    let map = |e: quick_xml::Error| PipelineError::Rsml(e.to_string());
    let mut el = BytesStart::new("root");
    el.push_attribute(("ID", root.id.as_str()));
    w.write_event(Event::Start(el)).map_err(map)?;
    w.write_event(Event::Start(BytesStart::new("geometry")))
        .map_err(map)?;
    w.write_event(Event::Start(BytesStart::new("polyline")))
        .map_err(map)?;
    for &(x, y) in &root.polyline {
        let mut p = BytesStart::new("point");
        p.push_attribute(("x", format!("{x:.6}").as_str()));
        p.push_attribute(("y", format!("{y:.6}").as_str()));
        w.write_event(Event::Empty(p)).map_err(map)?;
    }
    w.write_event(Event::End(BytesEnd::new("polyline"))).map_err(map)?;
    w.write_event(Event::End(BytesEnd::new("geometry"))).map_err(map)?;
    for child in &root.children {
        write_root(w, child)?;
    }
    w.write_event(Event::End(BytesEnd::new("root"))).map_err(map)?;
    Ok(())
}

/// Serializes the document as UTF-8 XML text.
pub fn write_rsml(doc: &RsmlDocument) -> Result<String> {
    let map = |e: quick_xml::Error| PipelineError::Rsml(e.to_string());
    let mut w = Writer::new_with_indent(Cursor::new(Vec::new()), b' ', 2);
    w.write_event(Event::Decl(BytesDecl::new("1.0", Some("UTF-8"), None)))
        .map_err(map)?;
    w.write_event(Event::Start(BytesStart::new("rsml"))).map_err(map)?;

    w.write_event(Event::Start(BytesStart::new("metadata"))).map_err(map)?;
    let meta = [
        ("version", doc.metadata.version.clone()),
        ("unit", doc.metadata.unit.clone()),
        ("resolution", fmt_sig(doc.metadata.resolution_mm_per_px)),
        ("last-capture-hours", fmt_sig(doc.metadata.last_capture_hours)),
        ("software", doc.metadata.software.clone()),
    ];
    for (tag, value) in meta {
        w.write_event(Event::Start(BytesStart::new(tag))).map_err(map)?;
        w.write_event(Event::Text(BytesText::new(&value))).map_err(map)?;
        w.write_event(Event::End(BytesEnd::new(tag))).map_err(map)?;
    }
    w.write_event(Event::End(BytesEnd::new("metadata"))).map_err(map)?;

    w.write_event(Event::Start(BytesStart::new("scene"))).map_err(map)?;
    let mut plant = BytesStart::new("plant");
    plant.push_attribute(("ID", doc.plant_id.as_str()));
    w.write_event(Event::Start(plant)).map_err(map)?;
    for root in &doc.roots {
        write_root(&mut w, root)?;
    }
    w.write_event(Event::End(BytesEnd::new("plant"))).map_err(map)?;
    w.write_event(Event::End(BytesEnd::new("scene"))).map_err(map)?;
    w.write_event(Event::End(BytesEnd::new("rsml"))).map_err(map)?;
    String::from_utf8(w.into_inner().into_inner())
        .map_err(|e| PipelineError::Rsml(e.to_string()))
}

/// Parses the RSML subset; unknown elements are skipped, structure and
/// geometry are required.
pub fn parse_rsml(text: &str) -> Result<RsmlDocument> {
    let mut reader = Reader::from_str(text);
    reader.config_mut().trim_text(true);

    let mut metadata = RsmlMetadata {
        version: String::new(),
        unit: String::new(),
        resolution_mm_per_px: 0.0,
        last_capture_hours: 0.0,
        software: String::new(),
    };
    let mut plant_id = String::new();
    let mut roots: Vec<RsmlRoot> = Vec::new();
    let mut root_stack: Vec<RsmlRoot> = Vec::new();
    let mut meta_tag: Option<String> = None;
    let mut in_polyline = false;
    let mut saw_rsml_end = false;

    loop {
        let pos = reader.buffer_position();
        let xml_err = |e: quick_xml::Error| PipelineError::XmlParse {
            offset: pos,
            message: e.to_string(),
        };
        match reader.read_event() {
            Err(e) => return Err(xml_err(e)),
            Ok(Event::Eof) => break,
            Ok(Event::Start(el)) => match el.name().as_ref() {
                b"metadata" | b"rsml" | b"scene" | b"geometry" => {}
                b"polyline" => in_polyline = true,
                b"plant" => {
                    plant_id = attr(&el, "ID").unwrap_or_default();
                }
                b"root" => {
                    root_stack.push(RsmlRoot {
                        id: attr(&el, "ID").unwrap_or_default(),
                        polyline: Vec::new(),
                        children: Vec::new(),
                    });
                }
                b"version" | b"unit" | b"resolution" | b"last-capture-hours" | b"software" => {
                    meta_tag = Some(
                        String::from_utf8_lossy(el.name().as_ref()).into_owned(),
                    );
                }
                _ => {} // unknown elements ignored
            },
            Ok(Event::Empty(el)) => {
                if el.name().as_ref() == b"point" && in_polyline {
                    let x = attr_f64(&el, "x", pos)?;
                    let y = attr_f64(&el, "y", pos)?;
                    if let Some(r) = root_stack.last_mut() {
                        r.polyline.push((x, y));
                    }
                }
            }
            Ok(Event::Text(t)) => {
                if let Some(tag) = meta_tag.take() {
                    let v = t
                        .unescape()
                        .map_err(xml_err)?
                        .into_owned();
                    match tag.as_str() {
                        "version" => metadata.version = v,
                        "unit" => metadata.unit = v,
                        "software" => metadata.software = v,
                        "resolution" => {
                            metadata.resolution_mm_per_px = v.parse().map_err(|_| {
                                PipelineError::Rsml(format!("bad resolution value {v:?}"))
                            })?
                        }
                        "last-capture-hours" => {
                            metadata.last_capture_hours = v.parse().map_err(|_| {
                                PipelineError::Rsml(format!("bad capture time {v:?}"))
                            })?
                        }
                        _ => unreachable!(),
                    }
                }
            }
            Ok(Event::End(el)) => match el.name().as_ref() {
                b"polyline" => in_polyline = false,
                b"rsml" => saw_rsml_end = true,
                b"root" => {
                    let done = root_stack.pop().ok_or_else(|| PipelineError::XmlParse {
                        offset: pos,
                        message: "unmatched </root>".into(),
                    })?;
                    if done.polyline.len() < 2 {
                        return Err(PipelineError::Rsml(format!(
                            "root {:?} has fewer than 2 geometry points",
                            done.id
                        )));
                    }
                    match root_stack.last_mut() {
                        Some(parent) => parent.children.push(done),
                        None => roots.push(done),
                    }
                }
                _ => {}
            },
            Ok(_) => {}
        }
    }
    if !saw_rsml_end || !root_stack.is_empty() {
        return Err(PipelineError::XmlParse {
            offset: reader.buffer_position(),
            message: "unexpected end of document".into(),
        });
    }
    if metadata.unit != "mm" && metadata.resolution_mm_per_px <= 0.0 {
        return Err(PipelineError::Rsml(format!(
            "unsupported unit {:?} without a resolution",
            metadata.unit
        )));
    }
    Ok(RsmlDocument {
        metadata,
        plant_id,
        roots,
    })
}

fn attr(el: &BytesStart, name: &str) -> Option<String> {
    el.attributes().flatten().find_map(|a| {
        (a.key.as_ref() == name.as_bytes())
            .then(|| String::from_utf8_lossy(&a.value).into_owned())
    })
}

fn attr_f64(el: &BytesStart, name: &str, pos: u64) -> Result<f64> {
    attr(el, name)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| PipelineError::XmlParse {
            offset: pos,
            message: format!("point missing numeric {name:?} attribute"),
        })
}
