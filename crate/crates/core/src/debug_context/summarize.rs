use thiserror::Error;

use super::{DebugContext, MIN_SUMMARY_BUDGET, VALUE_RENDER_LIMIT};

pub const TRUNCATION_MARKER: &str = "[context truncated]";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SummaryError {
    #[error("summary budget {budget} is below the minimum of {min}")]
    BudgetTooSmall { budget: usize, min: usize },
}

/// Rendered summary items in priority order.
pub(crate) fn summary_items(ctx: &DebugContext) -> Vec<String> {
    let mut items = Vec::new();
    let e = &ctx.exception;
    items.push(format!("{}: {}", e.type_name, e.message));
    for inner in e.chain().skip(1) {
        items.push(format!(
            "inner {}: {} (thrown at {})",
            inner.type_name, inner.message, inner.thrown_at
        ));
    }
    for f in &ctx.frames {
        let tag = if f.external { " [external]" } else { "" };
        items.push(format!("#{} {} at {}{tag}", f.index, f.function_name, f.location));
    }
    if let Some(top) = ctx.top_frame() {
        for b in &top.locals {
            let clipped = b.clipped(VALUE_RENDER_LIMIT);
            let ellipsis = if clipped.value_truncated { "…" } else { "" };
            items.push(format!("local {} = {}{ellipsis}", b.name, clipped.rendered_value));
        }
        if let Some(code) = ctx.excerpt_at(&top.location) {
            items.push(format!("source at {}:\n{code}", top.location));
        }
    }
    items
}

fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Pack the context into at most `budget_chars` characters, keeping the
/// longest prefix of items that fits.
pub fn summarize_context(ctx: &DebugContext, budget_chars: usize) -> Result<String, SummaryError> {
    if budget_chars < MIN_SUMMARY_BUDGET {
        return Err(SummaryError::BudgetTooSmall {
            budget: budget_chars,
            min: MIN_SUMMARY_BUDGET,
        });
    }
    let items = summary_items(ctx);
    let lens: Vec<usize> = items.iter().map(|i| char_len(i)).collect();
    let total: usize = lens.iter().sum::<usize>() + lens.len().saturating_sub(1);
    if total <= budget_chars {
        return Ok(items.join("\n"));
    }
    let reserve = char_len(TRUNCATION_MARKER) + 1;
    let room = budget_chars - reserve;
    let mut kept = 0;
    let mut used = 0;
    for (i, len) in lens.iter().enumerate() {
        let next = used + len + usize::from(i > 0);
        if next > room {
            break;
        }
        used = next;
        kept += 1;
    }
    let mut out = if kept == 0 {
        let head: String = items[0].chars().take(room - 1).collect();
        format!("{head}…")
    } else {
        items[..kept].join("\n")
    };
    out.push('\n');
    out.push_str(TRUNCATION_MARKER);
    Ok(out)
}
