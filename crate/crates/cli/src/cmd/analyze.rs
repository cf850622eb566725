use celestine::netspec::*;
use celestine::preprocess::{RESIZE_COLS, RESIZE_ROWS};
use serde_json::json;

use super::Outcome;
use crate::{Context, ItemFailures};

#[derive(clap::Args)]
pub struct Args {
    /// Batch size for the memory estimate.
    #[arg(long, default_value_t = 4)]
    batch: usize,
}

fn describe(layer: &LayerSpec) -> String {
    match *layer {
        LayerSpec::Conv { kernel, stride, out_channels } => format!("conv {kernel}x{kernel}/{stride}, {out_channels}"),
        LayerSpec::MaxPool { kernel, stride } => format!("maxpool {kernel}x{kernel}/{stride}"),
        LayerSpec::AdaptiveAvgPool { target_h, target_w } => format!("adaptive avg pool {target_h}x{target_w}"),
        LayerSpec::Linear { units } => format!("linear {units}"),
        other => other.kind().to_string(),
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn run(args: &Args, ctx: &Context) -> Outcome {
    if args.batch == 0 {
        return Err(crate::usage("--batch must be >= 1"));
    }
    let spec = ctx.spec_or("hr-celestialnet")?;
    let shapes = propagate_shapes(&spec)?;
    let params = count_params(&spec, false)?;
    let params_bn = count_params(&spec, true)?;
    let resources = estimate_memory(&spec, args.batch)?;
    let published = spec.name == "HR-CelestialNet";
    let comparison = if published { Some(compare_with_published(&spec)?) } else { None };

    println!("{} v{} (sha256 {})", spec.name, spec.version, &hex(&spec.hash())[..16]);
    println!("input {}", fmt_shape(&shapes.input));
    println!();
    println!("{:>5} {:>4}  {:<24}{:<18}{:>12}  {:<18}{:>12}  Status", "Layer", "Row", "Type", "Output", "Params", "Published", "Params");
    let rows = spec.table_row_indices();
    for (i, layer) in spec.layers.iter().enumerate() {
        let row = rows.iter().position(|&r| r == i);
        let cmp = row.and_then(|r| comparison.as_ref().and_then(|c| c.get(r)));
        let (pub_shape, pub_params, status) = match cmp {
            Some(c) => (
                fmt_shape(&c.expected_output),
                c.expected_params.to_string(),
                match c.status {
                    RowStatus::Match => "match",
                    RowStatus::Mismatch => "MISMATCH",
                    RowStatus::Erratum => "erratum (published value inconsistent)",
                },
            ),
            None => (String::new(), String::new(), ""),
        };
        println!(
            "{:>5} {:>4}  {:<24}{:<18}{:>12}  {:<18}{:>12}  {}",
            i,
            row.map(|r| (r + 1).to_string()).unwrap_or_default(),
            describe(layer),
            fmt_shape(&shapes.outputs[i]),
            params.per_layer[i],
            pub_shape,
            pub_params,
            status
        );
    }
    if let Some(c) = &comparison {
        for note in c.iter().filter_map(|r| r.note.as_ref().map(|n| (r.row, n))) {
            println!("note (row {}): {}", note.0, note.1);
        }
    }
    println!();
    println!("trainable parameters: {} (with batch normalization: {})", params.total, params_bn.total);
    let b = args.batch;
    let resize_bytes = (b * RESIZE_ROWS * RESIZE_COLS * BYTES_PER_ELEMENT) as u64;
    println!();
    println!("Resources at batch {b}, {BYTES_PER_ELEMENT} B/element (MB = 2^20 B, GB = 2^30 B)");
    println!("{:<34}{:>12}{:>12}", "", "this spec", if published { "published" } else { "" });
    let line = |name: &str, v: String, p: Option<f64>| {
        println!("{name:<34}{v:>12}{:>12}", p.filter(|_| published && b == 4).map(|p| p.to_string()).unwrap_or_default());
    };
    line("input size (MB)", format!("{:.2}", mib(resources.input_bytes)), Some(PUBLISHED_INPUT_MB));
    line("input size, 224x448 (MB)", format!("{:.2}", mib(resize_bytes)), Some(PUBLISHED_INPUT_RESIZE_MB));
    line("params size (MB)", format!("{:.2}", mib(resources.param_bytes)), Some(PUBLISHED_MODEL_MB));
    line("forward/backward pass size (GB)", format!("{:.2}", gib(2 * resources.activation_bytes)), None);
    line("estimated total size (GB)", format!("{:.2}", gib(resources.estimated_total_bytes)), Some(PUBLISHED_TOTAL_GB));
    println!("estimate = input + params (with BN) + 2 x every layer output");

    let mismatches = comparison.iter().flatten().filter(|r| r.status == RowStatus::Mismatch).count();
    let report = json!({
        "command": "analyze",
        "spec": { "name": spec.name, "version": spec.version, "sha256": hex(&spec.hash()) },
        "shapes": shapes,
        "params": params,
        "params_with_batchnorm": params_bn,
        "resources": resources,
        "input_resize_bytes": resize_bytes,
        "published_comparison": comparison,
        "mismatches": mismatches,
    });
    let outcome = if mismatches == 0 { Ok(()) } else { Err(ItemFailures(mismatches).into()) };
    Ok((report, outcome))
}
