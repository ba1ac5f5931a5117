//! Threshold monitors that emit the Rule Validation and Task Status Rules
//! trigger codes.

use serde::{Deserialize, Serialize};

use crate::state::{Counters, GlobalState, TaskStatus, TriggerCode};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuleConfig {
    /// Periodic check once this many actions ran since the last check.
    pub quality_check_every: u32,
    /// Fires when the identical-action run exceeds this.
    pub repeated_action_limit: u32,
    /// Fires when one subtask's action count exceeds this.
    pub long_execution_limit: u32,
    pub max_state_switches: u32,
    /// Fires when planning attempts exceed this.
    pub max_plan_attempts: u32,
    /// Seconds.
    pub max_runtime: u64,
    /// Optional per-task switch ceiling below `max_state_switches`.
    pub task_switch_limit: Option<u32>,
}

impl Default for RuleConfig {
    fn default() -> Self {
        Self {
            quality_check_every: 5,
            repeated_action_limit: 3,
            long_execution_limit: 15,
            max_state_switches: 100,
            max_plan_attempts: 10,
            max_runtime: 1800,
            task_switch_limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("rule threshold `{0}` must be at least 1")]
pub struct InvalidRuleConfig(pub &'static str);

impl RuleConfig {
    pub fn validate(&self) -> Result<(), InvalidRuleConfig> {
        let checks = [
            ("quality_check_every", self.quality_check_every as u64),
            ("repeated_action_limit", self.repeated_action_limit as u64),
            ("long_execution_limit", self.long_execution_limit as u64),
            ("max_state_switches", self.max_state_switches as u64),
            ("max_plan_attempts", self.max_plan_attempts as u64),
            ("max_runtime", self.max_runtime),
            ("task_switch_limit", self.task_switch_limit.map_or(1, u64::from)),
        ];
        match checks.into_iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(InvalidRuleConfig(name)),
            None => Ok(()),
        }
    }
}

/// Per-step monitors, in priority order repeated → long → periodic.
pub fn check_step_rules(counters: &Counters, config: &RuleConfig) -> Option<TriggerCode> {
    if counters.repeated_action_run > config.repeated_action_limit {
        Some(TriggerCode::RuleQualityCheckRepeatedActions)
    } else if counters.current_subtask_actions > config.long_execution_limit {
        Some(TriggerCode::RuleReplanLongExecution)
    } else if counters.steps_since_quality_check >= config.quality_check_every {
        Some(TriggerCode::RuleQualityCheckSteps)
    } else {
        None
    }
}

/// Task-level bounds. `now` is in the same unit as `task_started_at`.
pub fn check_task_rules(state: &GlobalState, now: u64, config: &RuleConfig) -> Option<TriggerCode> {
    let c = &state.counters;
    if state.task == TaskStatus::Fulfilled {
        Some(TriggerCode::RuleTaskCompleted)
    } else if now.saturating_sub(c.task_started_at) > config.max_runtime {
        Some(TriggerCode::RuleTaskRuntimeExceeded)
    } else if c.state_switches >= config.max_state_switches {
        Some(TriggerCode::RuleMaxStateSwitchesReached)
    } else if config
        .task_switch_limit
        .is_some_and(|limit| c.state_switches >= limit)
    {
        Some(TriggerCode::RuleStateSwitchCountExceeded)
    } else if c.plan_attempts > config.max_plan_attempts {
        Some(TriggerCode::RulePlanNumberExceeded)
    } else {
        None
    }
}

/// Task rules outrank step rules; step rules are only consulted right after
/// an action attempt.
pub fn check_rules(
    state: &GlobalState,
    now: u64,
    config: &RuleConfig,
    after_action: bool,
) -> Option<TriggerCode> {
    check_task_rules(state, now, config).or_else(|| {
        if after_action {
            check_step_rules(&state.counters, config)
        } else {
            None
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counters(run: u32, actions: u32, since: u32) -> Counters {
        Counters {
            repeated_action_run: run,
            current_subtask_actions: actions,
            steps_since_quality_check: since,
            ..Counters::default()
        }
    }

    #[test]
    fn step_rule_examples() {
        let cfg = RuleConfig::default();
        assert_eq!(
            check_step_rules(&counters(4, 4, 4), &cfg),
            Some(TriggerCode::RuleQualityCheckRepeatedActions)
        );
        assert_eq!(
            check_step_rules(&counters(1, 16, 0), &cfg),
            Some(TriggerCode::RuleReplanLongExecution)
        );
        assert_eq!(
            check_step_rules(&counters(1, 5, 5), &cfg),
            Some(TriggerCode::RuleQualityCheckSteps)
        );
        assert_eq!(check_step_rules(&counters(3, 15, 4), &cfg), None);
    }

    #[test]
    fn step_rule_priority() {
        let cfg = RuleConfig::default();
        assert_eq!(
            check_step_rules(&counters(9, 20, 9), &cfg),
            Some(TriggerCode::RuleQualityCheckRepeatedActions)
        );
        assert_eq!(
            check_step_rules(&counters(1, 20, 9), &cfg),
            Some(TriggerCode::RuleReplanLongExecution)
        );
    }

    fn state_with(switches: u32, plans: u32) -> GlobalState {
        let mut s = GlobalState::new(0);
        s.counters.state_switches = switches;
        s.counters.plan_attempts = plans;
        s
    }

    #[test]
    fn task_rule_examples() {
        let cfg = RuleConfig::default();
        assert_eq!(
            check_task_rules(&state_with(0, 11), 0, &cfg),
            Some(TriggerCode::RulePlanNumberExceeded)
        );
        assert_eq!(check_task_rules(&state_with(0, 10), 0, &cfg), None);
        assert_eq!(
            check_task_rules(&state_with(100, 0), 0, &cfg),
            Some(TriggerCode::RuleMaxStateSwitchesReached)
        );
        assert_eq!(check_task_rules(&state_with(99, 0), 0, &cfg), None);
        assert_eq!(check_task_rules(&GlobalState::new(0), 0, &cfg), None);
        assert_eq!(
            check_task_rules(&state_with(0, 0), 1801, &cfg),
            Some(TriggerCode::RuleTaskRuntimeExceeded)
        );
        assert_eq!(check_task_rules(&state_with(0, 0), 1800, &cfg), None);
    }

    #[test]
    fn completion_outranks_bounds() {
        let mut s = state_with(200, 50);
        s.task = TaskStatus::Fulfilled;
        assert_eq!(
            check_task_rules(&s, 99_999, &RuleConfig::default()),
            Some(TriggerCode::RuleTaskCompleted)
        );
    }

    #[test]
    fn per_task_switch_limit() {
        let cfg = RuleConfig {
            task_switch_limit: Some(40),
            ..RuleConfig::default()
        };
        assert_eq!(check_task_rules(&state_with(39, 0), 0, &cfg), None);
        assert_eq!(
            check_task_rules(&state_with(40, 0), 0, &cfg),
            Some(TriggerCode::RuleStateSwitchCountExceeded)
        );
    }

    #[test]
    fn task_rules_outrank_step_rules() {
        let mut s = state_with(100, 0);
        s.counters.repeated_action_run = 9;
        assert_eq!(
            check_rules(&s, 0, &RuleConfig::default(), true),
            Some(TriggerCode::RuleMaxStateSwitchesReached)
        );
        let mut s = state_with(0, 0);
        s.counters.repeated_action_run = 9;
        assert_eq!(check_rules(&s, 0, &RuleConfig::default(), false), None);
    }

    #[test]
    fn zero_thresholds_rejected() {
        let cfg = RuleConfig {
            max_plan_attempts: 0,
            ..RuleConfig::default()
        };
        assert_eq!(cfg.validate(), Err(InvalidRuleConfig("max_plan_attempts")));
        assert!(RuleConfig::default().validate().is_ok());
    }
}
