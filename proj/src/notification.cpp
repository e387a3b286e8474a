#include "skillflow/notification.hpp"

#include <fstream>

#include "skillflow/error.hpp"

namespace skillflow {

using nlohmann::json;

json to_json(const NotificationRecord& r) {
    return {{"instanceId", r.instance_id}, {"taskId", r.task_id}, {"subject", r.subject},
            {"body", r.body},              {"timestamp", r.timestamp_ms}};
}

NotificationRecord notification_from_json(const json& j) {
    try {
        return {j.at("instanceId").get<std::string>(), j.at("taskId").get<std::string>(),
                j.at("subject").get<std::string>(), j.at("body").get<std::string>(),
                j.value("timestamp", std::int64_t{0})};
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("malformed notification: ") + e.what());
    }
}

void MemorySink::deliver(const NotificationRecord& record) {
    std::lock_guard lock(mu_);
    records_.push_back(record);
}

std::vector<NotificationRecord> MemorySink::records() const {
    std::lock_guard lock(mu_);
    return records_;
}

void FileSink::deliver(const NotificationRecord& record) {
    std::lock_guard lock(mu_);
    std::ofstream out(path_, std::ios::app | std::ios::binary);
    if (!out) throw Error(ErrorCode::StorageError, "cannot open " + path_.string());
    out << to_json(record).dump() << '\n';
    if (!out.flush()) throw Error(ErrorCode::StorageError, "cannot write " + path_.string());
}

std::vector<NotificationRecord> FileSink::records() const {
    std::lock_guard lock(mu_);
    std::vector<NotificationRecord> out;
    std::ifstream in(path_, std::ios::binary);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(notification_from_json(json::parse(line)));
    return out;
}

} // namespace skillflow
