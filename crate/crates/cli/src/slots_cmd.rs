//! Slot-file utilities: initialize a table, inspect it, repair leaked
//! holders, and a stress worker used to exercise the advisory lock from many
//! OS processes at once.

use std::path::Path;
use std::time::Duration;

use compute_endpoint::{
    acquire_slots, add_node_slots, init_slot_file, read_slots, release_slots, repair, SlotState,
};

pub fn cmd_init(slot_file: &Path, nodes: usize, slots_per_node: usize) -> anyhow::Result<i32> {
    if nodes == 0 || slots_per_node == 0 {
        eprintln!("error: nodes and slots-per-node must be at least 1");
        return Ok(2);
    }
    init_slot_file(slot_file)?;
    for k in 1..=nodes {
        add_node_slots(slot_file, &format!("node{k}"), slots_per_node)?;
    }
    eprintln!(
        "initialized {} with {} node(s) x {} slot(s)",
        slot_file.display(),
        nodes,
        slots_per_node
    );
    Ok(0)
}

pub fn cmd_show(slot_file: &Path) -> anyhow::Result<i32> {
    let table = read_slots(slot_file)?;
    eprintln!("{:<12} {:<6} holder", "slot", "state");
    for slot in &table.slots {
        eprintln!(
            "{:<12} {:<6} {}",
            slot.slot_id,
            match slot.state {
                SlotState::Free => "free",
                SlotState::Busy => "busy",
            },
            slot.holder.as_deref().unwrap_or("-")
        );
    }
    eprintln!("{} busy / {} total", table.busy_total(), table.slots.len());
    Ok(0)
}

pub fn cmd_repair(slot_file: &Path, holder: Option<&str>) -> anyhow::Result<i32> {
    let freed = repair(slot_file, holder)?;
    eprintln!("freed {freed} slot(s)");
    Ok(0)
}

/// Loops acquire -> witness -> release against a shared slot file. Each held
/// slot gets a witness file stamped with `worker:cycle`; if the stamp changes
/// while the slot is held, another process held the same slot concurrently
/// and the worker exits 1.
pub fn cmd_stress_worker(
    slot_file: &Path,
    witness_dir: &Path,
    worker_id: usize,
    cycles: usize,
    hold_us: u64,
) -> anyhow::Result<i32> {
    std::fs::create_dir_all(witness_dir)?;
    for cycle in 0..cycles {
        let task_id = format!("stress-w{worker_id}-c{cycle}");
        let acquired = acquire_slots(slot_file, &task_id, 1, None, || true)?
            .expect("keep_waiting is constant true");
        let slot = &acquired.slots[0];
        let witness = witness_dir.join(format!("{slot}.holder"));
        let stamp = format!("{worker_id}:{cycle}");
        std::fs::write(&witness, &stamp)?;
        std::thread::sleep(Duration::from_micros(hold_us));
        let seen = std::fs::read_to_string(&witness).unwrap_or_default();
        if seen != stamp {
            release_slots(slot_file, &task_id)?;
            let report = witness_dir.join(format!("violation-w{worker_id}.txt"));
            let _ = std::fs::write(
                &report,
                format!("slot {slot}: expected stamp {stamp}, found {seen}\n"),
            );
            eprintln!("worker {worker_id}: double-holder on {slot} (saw '{seen}')");
            return Ok(1);
        }
        release_slots(slot_file, &task_id)?;
    }
    Ok(0)
}
