use std::sync::Arc;

use memo_core::dsl::parse;
use memo_core::simenv::{SimEnv, Split, TaskSuite};

fn suite() -> TaskSuite {
    TaskSuite::load_dir(&memo_core::asset_dir().join("tasks")).expect("task suite loads")
}

#[test]
fn suite_has_twenty_training_and_five_held_out_tasks() {
    let s = suite();
    assert_eq!(s.split(Split::Train).count(), 20);
    assert_eq!(s.split(Split::HeldOut).count(), 5);
}

#[test]
fn every_reference_program_reaches_its_goals() {
    let mut failures = Vec::new();
    for spec in suite().iter() {
        let mut env = SimEnv::new(Arc::new(spec.clone()));
        'task: for s in &spec.subtasks {
            let program = parse(&s.program).unwrap();
            for call in &program.calls {
                let out = env.step_skill(call);
                if !out.is_ok() {
                    failures.push(format!("{} / {}: {} -> {:?}", spec.name, s.name, call, out));
                    break 'task;
                }
            }
            if !env.check_subtask(&s.name).unwrap() {
                failures.push(format!("{} / {}: subtask goal unmet", spec.name, s.name));
                break;
            }
        }
        if failures.is_empty() || !failures.last().unwrap().starts_with(&spec.name) {
            if !env.check_success() {
                failures.push(format!("{}: task goal unmet", spec.name));
            }
        }
    }
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

/// Runs `prefix` subtasks' reference programs, then `program`; returns the
/// first violation kind or whether the subtask goal holds.
fn run_after(task: &str, prefix: usize, program: &str) -> Result<bool, String> {
    let s = suite();
    let spec = s.get(task).unwrap().clone();
    let mut env = SimEnv::new(Arc::new(spec.clone()));
    for sub in &spec.subtasks[..prefix] {
        for call in &parse(&sub.program).unwrap().calls {
            assert!(env.step_skill(call).is_ok());
        }
    }
    for call in &parse(program).unwrap().calls {
        if let Some(v) = env.step_skill(call).violation() {
            return Err(format!("{v:?}"));
        }
    }
    Ok(env.check_subtask(&spec.subtasks[prefix].name).unwrap())
}

#[test]
fn naive_programs_fail_where_scenarios_expect() {
    let pull = |h: &str, at: &str| format!("move_to(pose({at},0,0,0))\ngrasp(obj(\"{h}\"))\nmove_delta(-0.15m,0m,0m)");
    assert_eq!(run_after("make toast", 0, &pull("toaster handle", "0.53,-0.12,0.1")), Err("ObjectCollision".into()));
    assert_eq!(
        run_after("empty the cabinet", 0, &pull("cabinet handle", "0.53,-0.17,0.15")),
        Err("ObjectCollision".into())
    );
    assert_eq!(
        run_after("put the food in the oven", 0, &pull("oven handle", "0.53,0,0.21")),
        Err("ObjectCollision".into())
    );
    let small = "move_to(pose(0.53,-0.12,0.1,0,0,0))\ngrasp(obj(\"toaster handle\"))\nrotate_joint(obj(\"toaster door\"),-0.3rad)";
    assert_eq!(run_after("make toast", 0, small), Ok(false));
    let wrong_way =
        "move_to(pose(0.55,0.1,0.175,0,0,0))\ngrasp(obj(\"bottle cap\"))\nrotate_joint(obj(\"bottle cap\"),3.14rad)";
    assert_eq!(run_after("close the bottle", 0, wrong_way), Err("JointLimit".into()));
    let too_low = "move_to(pose(0.4,-0.15,0.35,0,0,0))\nmove_to(pose(0.4,-0.15,0,0,0,0))\nrelease()";
    assert_eq!(run_after("place the apple on the table", 1, too_low), Err("TableCollision".into()));
    let upright = "move_to(pose(0.6,0.05,0.3,0,0,0))";
    assert_eq!(run_after("pour the can", 1, upright), Ok(false));
    let shallow = "move_to(pose(0.6,0,0.3,0,0,0))\nmove_to(pose(0.6,0,0.3,0,0.6,0))";
    assert_eq!(run_after("season the food", 1, shallow), Ok(false));
    // Entering a closed appliance from the front hits the door; from above, the roof.
    let blocked = "move_to(pose(0.35,-0.25,0.35,0,0,0))\nmove_to(pose(0.35,-0.25,0.01,0,0,0))\ngrasp(obj(\"bread\"))\nmove_to(pose(0.35,-0.25,0.35,0,0,0))\nmove_to(pose(0.65,0,0.35,0,0,0))\nmove_to(pose(0.65,0,0.05,0,0,0))";
    assert_eq!(run_after("make toast", 0, blocked), Err("ObjectCollision".into()));
}
