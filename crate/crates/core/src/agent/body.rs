//! Body configuration as a statechart: one enabled/disabled composite per
//! device, resumed through shallow history when the body is entered.

use std::collections::BTreeMap;

use super::{validate_devices, AgentError, BodyConfig, DeviceSpec, Direction};
use crate::statechart::{
    Cmp, Condition, Configuration, Event, StateNode, Statechart, Tracer, Transition,
};

pub(crate) const CONFIGURE: &str = "configure";
pub(crate) const SELECT: &str = "select";

fn device_state(id: &str) -> String {
    format!("dev:{id}")
}

fn enabled_state(id: &str) -> String {
    format!("dev:{id}.enabled")
}

fn disabled_state(id: &str) -> String {
    format!("dev:{id}.disabled")
}

/// Wraps `children` in an AND when there are several, or in a single-child
/// XOR otherwise.
fn group(id: &str, children: Vec<String>, nodes: &mut Vec<StateNode>) {
    if children.len() >= 2 {
        nodes.push(StateNode::and(id, children));
    } else {
        let first = children[0].clone();
        nodes.push(StateNode::xor(id, children, first));
    }
}

/// Builds the configuration chart for a device inventory.
///
/// `idle` → `body` on `configure`. Inside `body`, inputs and outputs are
/// orthogonal groups and every device is an orthogonal region with
/// `disabled`/`enabled` substates. A `select` event whose payload holds
/// `device → 1|0` switches the named devices in one step.
pub fn body_chart(devices: &[DeviceSpec]) -> Result<Statechart, AgentError> {
    validate_devices(devices)?;
    let mut nodes = Vec::new();
    let mut transitions = Vec::new();
    let mut groups = Vec::new();
    for (gid, direction) in [("inputs", Direction::Input), ("outputs", Direction::Output)] {
        let members: Vec<&DeviceSpec> = devices
            .iter()
            .filter(|d| d.direction == direction)
            .collect();
        if members.is_empty() {
            continue;
        }
        let mut regions = Vec::new();
        for d in members {
            let (on, off) = (enabled_state(&d.id), disabled_state(&d.id));
            nodes.push(StateNode::basic(&off));
            nodes.push(StateNode::basic(&on));
            nodes.push(
                StateNode::xor(device_state(&d.id), [off.clone(), on.clone()], off.clone())
                    .with_default_history(),
            );
            transitions.push(
                Transition::new(off.as_str(), on.as_str())
                    .named(format!("enable:{}", d.id))
                    .on(SELECT)
                    .when(Condition::payload(&d.id, Cmp::Eq, 1.0)),
            );
            transitions.push(
                Transition::new(on.as_str(), off.as_str())
                    .named(format!("disable:{}", d.id))
                    .on(SELECT)
                    .when(Condition::payload(&d.id, Cmp::Eq, 0.0)),
            );
            regions.push(device_state(&d.id));
        }
        group(gid, regions, &mut nodes);
        groups.push(gid.to_string());
    }
    if groups.is_empty() {
        nodes.push(StateNode::basic("body"));
    } else {
        group("body", groups, &mut nodes);
    }
    nodes.push(StateNode::basic("idle"));
    nodes.push(StateNode::xor(
        "agent_configuration",
        ["idle", "body"],
        "idle",
    ));
    transitions.push(
        Transition::new("idle", "body")
            .named(CONFIGURE)
            .on(CONFIGURE),
    );
    Ok(Statechart::build(nodes, transitions)?)
}

/// Reads the enabled map from an active body configuration.
fn read_body(
    chart: &Statechart,
    cfg: &Configuration,
    devices: &[DeviceSpec],
) -> BTreeMap<String, bool> {
    devices
        .iter()
        .map(|d| (d.id.clone(), chart.is_active(cfg, &enabled_state(&d.id))))
        .collect()
}

/// Applies `selection` on top of `prior` (or all-disabled) by running the
/// body chart: prior settings seed the history memory of each device, the
/// body is entered, then one `select` event switches the listed devices.
pub fn configure_body(
    devices: &[DeviceSpec],
    selection: &BTreeMap<String, bool>,
    prior: Option<&BodyConfig>,
    tracer: &mut Tracer,
) -> Result<BodyConfig, AgentError> {
    for id in selection.keys() {
        if !devices.iter().any(|d| &d.id == id) {
            return Err(AgentError::UnknownDevice(id.clone()));
        }
    }
    let chart = body_chart(devices)?;
    let (mut cfg, _) = chart.initialize_traced(tracer);
    if let Some(prior) = prior {
        for d in devices {
            if prior.device(&d.id).is_some() {
                let child = if prior.is_enabled(&d.id) {
                    enabled_state(&d.id)
                } else {
                    disabled_state(&d.id)
                };
                chart.remember(&mut cfg, &device_state(&d.id), &child)?;
            }
        }
    }
    let (cfg, _) = chart.dispatch_traced(&cfg, &Event::new(CONFIGURE), tracer)?;
    let mut select = Event::new(SELECT);
    for (id, &on) in selection {
        select = select.with(id.clone(), if on { 1.0 } else { 0.0 });
    }
    let (cfg, _) = chart.dispatch_traced(&cfg, &select, tracer)?;
    debug_assert!(chart.check_configuration(&cfg).is_ok());
    Ok(BodyConfig {
        devices: devices.to_vec(),
        enabled: read_body(&chart, &cfg, devices),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statechart::TraceKind;

    fn devices() -> Vec<DeviceSpec> {
        vec![
            DeviceSpec::input("light", "brightness"),
            DeviceSpec::input("motion", "people"),
            DeviceSpec::output("switch", "light").with_levels(["OFF", "DIM", "ON"]),
        ]
    }

    fn sel(items: &[(&str, bool)]) -> BTreeMap<String, bool> {
        items.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn fresh_body_starts_disabled() {
        let b =
            configure_body(&devices(), &BTreeMap::new(), None, &mut Tracer::disabled()).unwrap();
        assert!(b.enabled.values().all(|&v| !v));
        assert_eq!(b.enabled.len(), 3);
    }

    #[test]
    fn selection_applies_and_prior_persists() {
        let mut t = Tracer::disabled();
        let b1 = configure_body(
            &devices(),
            &sel(&[("light", true), ("switch", true)]),
            None,
            &mut t,
        )
        .unwrap();
        assert!(b1.is_enabled("light") && b1.is_enabled("switch") && !b1.is_enabled("motion"));
        let b2 = configure_body(
            &devices(),
            &sel(&[("motion", true), ("light", false)]),
            Some(&b1),
            &mut t,
        )
        .unwrap();
        assert!(!b2.is_enabled("light") && b2.is_enabled("motion") && b2.is_enabled("switch"));
    }

    #[test]
    fn unknown_device_rejected() {
        let err = configure_body(
            &devices(),
            &sel(&[("radar", true)]),
            None,
            &mut Tracer::disabled(),
        )
        .unwrap_err();
        assert_eq!(err, AgentError::UnknownDevice("radar".into()));
    }

    #[test]
    fn switching_is_traced() {
        let mut t = Tracer::new("a");
        configure_body(&devices(), &sel(&[("light", true)]), None, &mut t).unwrap();
        assert!(t
            .events()
            .iter()
            .any(|e| e.kind == TraceKind::Fired && e.subject == "enable:light"));
    }

    #[test]
    fn single_device_body() {
        let only = vec![DeviceSpec::output("s", "x")];
        let b = configure_body(&only, &sel(&[("s", true)]), None, &mut Tracer::disabled()).unwrap();
        assert!(b.is_enabled("s"));
        let empty = configure_body(&[], &BTreeMap::new(), None, &mut Tracer::disabled()).unwrap();
        assert!(empty.enabled.is_empty());
    }
}
