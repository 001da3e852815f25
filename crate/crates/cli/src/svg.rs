//! Gantt rendering of a timeline: one horizontal lane per device, time on
//! the x-axis, blue forward / green backward task rectangles with a dark and
//! a light shade alternating by model chunk, and thin amber strips for
//! transfers.

use ptdp::schedule::{Direction, Timeline};

use crate::output::sig6;

const LEFT: f64 = 72.0;
const TOP: f64 = 34.0;
const LANE_HEIGHT: f64 = 26.0;
const LANE_GAP: f64 = 8.0;
const CHART_WIDTH: f64 = 1080.0;
const AXIS_HEIGHT: f64 = 34.0;

fn task_fill(direction: Direction, chunk: u64) -> &'static str {
    match (direction, chunk.is_multiple_of(2)) {
        (Direction::Forward, true) => "#2e6db4",
        (Direction::Forward, false) => "#8ab8e0",
        (Direction::Backward, true) => "#2f8f4e",
        (Direction::Backward, false) => "#97d1a9",
    }
}

pub fn render_svg(timeline: &Timeline) -> String {
    let devices = timeline.devices.len();
    let span = if timeline.span > 0.0 {
        timeline.span
    } else {
        1.0
    };
    let scale = CHART_WIDTH / span;
    let height = TOP + devices as f64 * (LANE_HEIGHT + LANE_GAP) + AXIS_HEIGHT;
    let width = LEFT + CHART_WIDTH + 24.0;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {width:.0} {height:.0}\" \
         font-family=\"monospace\" font-size=\"11\">\n"
    ));
    svg.push_str(&format!(
        "<rect class=\"bg\" x=\"0\" y=\"0\" width=\"{width:.0}\" height=\"{height:.0}\" fill=\"#ffffff\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{LEFT}\" y=\"18\" fill=\"#333\">{} schedule  p={} m={} v={} batches={}  span={} s</text>\n",
        timeline.kind,
        timeline.pipeline_size,
        timeline.microbatches,
        timeline.chunks,
        timeline.batches,
        sig6(timeline.span),
    ));

    // Axis ticks and grid.
    for tick in 0..=6 {
        let t = span * tick as f64 / 6.0;
        let x = LEFT + t * scale;
        let y_bottom = TOP + devices as f64 * (LANE_HEIGHT + LANE_GAP);
        svg.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{TOP}\" x2=\"{x:.1}\" y2=\"{y_bottom:.1}\" \
             stroke=\"#dddddd\" stroke-width=\"1\"/>\n"
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" fill=\"#555\" text-anchor=\"middle\">{}</text>\n",
            y_bottom + 16.0,
            sig6(t),
        ));
    }

    for (r, tasks) in timeline.devices.iter().enumerate() {
        let y = TOP + r as f64 * (LANE_HEIGHT + LANE_GAP);
        svg.push_str(&format!(
            "<text x=\"8\" y=\"{:.1}\" fill=\"#333\">dev {r}</text>\n",
            y + LANE_HEIGHT * 0.7,
        ));
        for task in tasks {
            let x = LEFT + task.start * scale;
            let w = ((task.end - task.start) * scale).max(0.75);
            let class = match task.task.direction {
                Direction::Forward => "task f",
                Direction::Backward => "task b",
            };
            svg.push_str(&format!(
                "<rect class=\"{class}\" x=\"{x:.2}\" y=\"{y:.1}\" width=\"{w:.2}\" \
                 height=\"{LANE_HEIGHT}\" fill=\"{}\" stroke=\"#ffffff\" stroke-width=\"0.5\">\
                 <title>mb {} chunk {} {} [{} , {}]</title></rect>\n",
                task_fill(task.task.direction, task.task.chunk),
                task.task.microbatch,
                task.task.chunk,
                task.task.direction,
                sig6(task.start),
                sig6(task.end),
            ));
            if w >= 15.0 {
                svg.push_str(&format!(
                    "<text x=\"{:.2}\" y=\"{:.1}\" fill=\"#ffffff\" text-anchor=\"middle\">{}</text>\n",
                    x + w / 2.0,
                    y + LANE_HEIGHT * 0.68,
                    task.task.microbatch,
                ));
            }
        }
    }

    // Transfers as thin strips under the sending device's lane.
    for event in &timeline.comm_events {
        let y = TOP + event.from_device as f64 * (LANE_HEIGHT + LANE_GAP) + LANE_HEIGHT + 1.0;
        let x = LEFT + event.start * scale;
        let w = ((event.end - event.start) * scale).max(0.5);
        svg.push_str(&format!(
            "<rect class=\"comm\" x=\"{x:.2}\" y=\"{y:.1}\" width=\"{w:.2}\" height=\"4\" \
             fill=\"#e0a93c\" opacity=\"0.8\"><title>mb {} {} dev {} to {} ({} B)</title></rect>\n",
            event.microbatch,
            event.direction,
            event.from_device,
            event.to_device,
            sig6(event.volume_bytes),
        ));
    }

    svg.push_str("</svg>\n");
    svg
}
