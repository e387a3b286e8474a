#pragma once

#include <chrono>
#include <string>

#include "skillflow/connector.hpp"
#include "skillflow/notification.hpp"

namespace skillflow {

/// Speaks the plant wire protocol to the skill's interface base URL.
class HttpConnector : public SkillConnector {
public:
    explicit HttpConnector(std::chrono::milliseconds request_timeout = std::chrono::milliseconds(5000))
        : timeout_(request_timeout) {}

    void set_parameters(const Skill& skill, const VariableMap& values) override;
    SkillState invoke(const Skill& skill, TransitionCommand command) override;
    SkillStatus status(const Skill& skill) override;
    std::vector<StateEvent> poll_events(const Skill& skill, std::uint64_t since,
                                        std::chrono::milliseconds timeout) override;

    /// Not part of the connector contract; used by tooling.
    void inject_failure(const Skill& skill, const FailureInjection& injection);

private:
    std::chrono::milliseconds timeout_;
};

/// POSTs {subject, body, instanceId} to a URL.
class WebhookSink : public NotificationSink {
public:
    explicit WebhookSink(std::string url);
    void deliver(const NotificationRecord& record) override;

private:
    std::string origin_;
    std::string path_;
};

} // namespace skillflow
