//! Scripted dialogues end to end, with and without injected faults.

use officeflow::scenarios::{run_script, FaultPlan, ScenarioScript, BUILTIN_SCRIPTS};
use officeflow::sim::FaultMode;

#[test]
fn builtin_scripts_pass() {
    let mut steps = 0;
    for name in BUILTIN_SCRIPTS {
        let report = run_script(&ScenarioScript::builtin(name).unwrap(), None).unwrap();
        assert!(report.passed(), "{}", report.summary());
        steps += report.steps.len();
    }
    assert_eq!(steps, 9);
}

#[test]
fn followup_moves_meeting_to_two() {
    let report = run_script(&ScenarioScript::builtin("schedule_followup").unwrap(), None).unwrap();
    let step = &report.steps[1];
    assert_eq!(step.query, "Move the start time up to 2 PM");
    let trace = &step.traces[0];
    assert!(trace.turn.related);
    let call = &trace.turn.final_calls()[0].call;
    assert_eq!(call.api_name, "update_schedule");
    assert!(call.args["start_time"].as_text().unwrap().ends_with("T14:00:00"));
    assert_eq!(step.diff.changed["schedules"].len(), 1);
}

#[test]
fn faults_on_every_scripted_api() {
    for name in BUILTIN_SCRIPTS {
        let script = ScenarioScript::builtin(name).unwrap();
        for api in script.apis() {
            for mode in [FaultMode::FailOnce, FaultMode::FailAlways] {
                let plan = FaultPlan { api: api.clone(), mode };
                let report = run_script(&script, Some(&plan)).unwrap();
                assert!(report.passed(), "{}", report.summary());
            }
        }
    }
}
