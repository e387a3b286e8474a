#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "json.hpp"

namespace skillflow {

struct NotificationRecord {
    std::string instance_id;
    std::string task_id;
    std::string subject;
    std::string body;
    std::int64_t timestamp_ms = 0; // unix epoch

    bool operator==(const NotificationRecord&) const = default;
};

nlohmann::json to_json(const NotificationRecord& record);
NotificationRecord notification_from_json(const nlohmann::json& j);

/// Destination for rendered send-task messages. Delivery failures are
/// reported by throwing; the engine logs them and carries on.
class NotificationSink {
public:
    virtual ~NotificationSink() = default;
    virtual void deliver(const NotificationRecord& record) = 0;
};

class MemorySink : public NotificationSink {
public:
    void deliver(const NotificationRecord& record) override;
    std::vector<NotificationRecord> records() const;

private:
    mutable std::mutex mu_;
    std::vector<NotificationRecord> records_;
};

/// Appends one JSON object per line.
class FileSink : public NotificationSink {
public:
    explicit FileSink(std::filesystem::path path) : path_(std::move(path)) {}
    void deliver(const NotificationRecord& record) override;
    std::vector<NotificationRecord> records() const;
    const std::filesystem::path& path() const noexcept { return path_; }

private:
    mutable std::mutex mu_;
    std::filesystem::path path_;
};

} // namespace skillflow
