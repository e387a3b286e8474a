#include "skillflow/storage.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "skillflow/error.hpp"

namespace skillflow {

namespace fs = std::filesystem;

FileStorage::FileStorage(fs::path root) : root_(std::move(root)) {
    std::error_code ec;
    fs::create_directories(root_, ec);
    if (ec) throw Error(ErrorCode::StorageError, "cannot create " + root_.string() + ": " + ec.message());
}

fs::path FileStorage::path_of(const std::string& key) const {
    fs::path rel(key);
    if (rel.is_absolute() || key.find("..") != std::string::npos)
        throw Error(ErrorCode::StorageError, "invalid storage key " + key, key);
    return root_ / rel;
}

void FileStorage::write(const std::string& key, const std::string& bytes) {
    std::lock_guard lock(mu_);
    fs::path p = path_of(key);
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
    fs::path tmp = p;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out.flush()) throw Error(ErrorCode::StorageError, "cannot write " + tmp.string(), key);
    }
    fs::rename(tmp, p, ec);
    if (ec) throw Error(ErrorCode::StorageError, "cannot replace " + p.string() + ": " + ec.message(), key);
}

void FileStorage::append(const std::string& key, const std::string& bytes) {
    std::lock_guard lock(mu_);
    fs::path p = path_of(key);
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
    std::ofstream out(p, std::ios::binary | std::ios::app);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out.flush()) throw Error(ErrorCode::StorageError, "cannot append to " + p.string(), key);
}

std::optional<std::string> FileStorage::read(const std::string& key) const {
    std::lock_guard lock(mu_);
    std::ifstream in(path_of(key), std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void FileStorage::remove(const std::string& key) {
    std::lock_guard lock(mu_);
    std::error_code ec;
    fs::remove(path_of(key), ec);
    if (ec) throw Error(ErrorCode::StorageError, "cannot remove " + key + ": " + ec.message(), key);
}

std::vector<std::string> FileStorage::list(const std::string& prefix) const {
    std::lock_guard lock(mu_);
    std::vector<std::string> out;
    fs::path dir = path_of(prefix.empty() ? "." : prefix);
    std::error_code ec;
    if (!fs::is_directory(dir, ec)) return out;
    for (const auto& entry : fs::directory_iterator(dir, ec))
        if (entry.is_regular_file() && entry.path().extension() != ".tmp")
            out.push_back(prefix + entry.path().filename().string());
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace skillflow
