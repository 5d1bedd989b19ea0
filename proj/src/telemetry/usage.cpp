#include "fedgate/telemetry/usage.hpp"

#include <algorithm>

namespace fedgate::telemetry {

UsageRecord make_usage_record(const InferenceTask& task, const TaskOutcome& outcome,
                              const fabric::ModelInstance* instance) {
  UsageRecord r;
  r.task_id = task.id;
  r.subject = task.subject;
  r.model = task.model;
  r.endpoint = task.endpoint;
  r.kind = std::string(to_string(task.kind));
  r.arrived_at = task.arrived_at;
  r.completed_at = task.completed_at.value_or(task.arrived_at);
  r.dispatched_at = task.dispatched_at.value_or(r.completed_at);
  r.instance_id = task.instance_id;

  if (const auto* res = std::get_if<InferenceResult>(&outcome)) {
    r.prompt_tokens = res->usage.prompt_tokens;
    r.completion_tokens = res->usage.completion_tokens;
  } else {
    const auto& err = std::get<ApiError>(outcome);
    r.outcome = std::string(to_string(err.code));
    r.status = err.status();
  }

  if (!task.started_at || !task.dispatched_at) return r;
  const Instant d = *task.dispatched_at;
  const Instant s = std::max(*task.started_at, d);
  r.service = r.completed_at - s;

  const bool cold = instance != nullptr && instance->running_since && *instance->running_since > d &&
                    instance->allocated_at && instance->started_loading_at;
  if (!cold) {
    r.queue_wait = s - d;
    return r;
  }
  const Instant a = std::max(*instance->allocated_at, d);
  const Instant l = std::max(*instance->started_loading_at, a);
  const Instant run = std::max(*instance->running_since, l);
  r.queue_wait = (a - d) + (s - std::min(s, run));
  r.allocation = l - a;
  r.load = run - l;
  return r;
}

}  // namespace fedgate::telemetry
