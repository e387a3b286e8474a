#pragma once

#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace skillflow {

/// Flat key/value persistence addressed by relative paths like
/// "deployments/index.json". Throws Error(StorageError) on failure.
class Storage {
public:
    virtual ~Storage() = default;
    /// Replaces the whole object; readers see either the old or new bytes.
    virtual void write(const std::string& key, const std::string& bytes) = 0;
    virtual void append(const std::string& key, const std::string& bytes) = 0;
    virtual std::optional<std::string> read(const std::string& key) const = 0;
    virtual void remove(const std::string& key) = 0;
    /// Keys directly under `prefix` ("instances/" lists instance logs).
    virtual std::vector<std::string> list(const std::string& prefix) const = 0;
};

class FileStorage : public Storage {
public:
    explicit FileStorage(std::filesystem::path root);

    void write(const std::string& key, const std::string& bytes) override;
    void append(const std::string& key, const std::string& bytes) override;
    std::optional<std::string> read(const std::string& key) const override;
    void remove(const std::string& key) override;
    std::vector<std::string> list(const std::string& prefix) const override;

    const std::filesystem::path& root() const noexcept { return root_; }

private:
    std::filesystem::path path_of(const std::string& key) const;

    std::filesystem::path root_;
    mutable std::mutex mu_;
};

} // namespace skillflow
