#pragma once

#include "fedgate/fabric/fabric.hpp"
#include "fedgate/task.hpp"
#include "fedgate/telemetry/store.hpp"

namespace fedgate::telemetry {

/// Builds the usage record for a resolved task. `instance` is the instance
/// that ran the final attempt (null when the task never started).
///
/// On a cold start, with d = dispatched_at and each later instant clamped to
/// be no earlier than the one before it:
///   queue_wait = allocated - d + (started - running_since)
///   allocation = started_loading - allocated
///   load       = running_since - started_loading
///   service    = completed - started
/// so queue_wait + allocation + load + service = completed - dispatched.
/// On a hot instance queue_wait is the slot wait and the middle two are zero.
UsageRecord make_usage_record(const InferenceTask& task, const TaskOutcome& outcome,
                              const fabric::ModelInstance* instance);

}  // namespace fedgate::telemetry
