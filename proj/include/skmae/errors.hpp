#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace skmae {

// Root of every error thrown by this library.
class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
   public:
    using Error::Error;
};

// NaN/Inf produced by an operation, a loss, or a training step.
class NumericError : public Error {
   public:
    using Error::Error;
};

class ConfigError : public Error {
   public:
    using Error::Error;
};

class MaskError : public ConfigError {
   public:
    using ConfigError::ConfigError;
};

// A checkpoint tensor whose name or shape does not match the model being loaded.
class CheckpointMismatch : public ConfigError {
   public:
    CheckpointMismatch(const std::string& tensor, const std::string& what)
        : ConfigError("checkpoint tensor '" + tensor + "': " + what), tensor_(tensor) {}
    const std::string& tensor() const { return tensor_; }

   private:
    std::string tensor_;
};

class DataError : public Error {
   public:
    using Error::Error;
};

class ValidationError : public DataError {
   public:
    ValidationError(const std::string& what, std::optional<std::size_t> frame = std::nullopt,
                    std::optional<std::size_t> joint = std::nullopt)
        : DataError(format(what, frame, joint)), frame_(frame), joint_(joint) {}

    std::optional<std::size_t> frame() const { return frame_; }
    std::optional<std::size_t> joint() const { return joint_; }

   private:
    static std::string format(const std::string& what, std::optional<std::size_t> frame,
                              std::optional<std::size_t> joint) {
        std::string msg = what;
        if (frame) msg += " (frame " + std::to_string(*frame);
        if (joint) msg += (frame ? ", joint " : " (joint ") + std::to_string(*joint);
        if (frame || joint) msg += ")";
        return msg;
    }

    std::optional<std::size_t> frame_;
    std::optional<std::size_t> joint_;
};

class IoError : public DataError {
   public:
    IoError(const std::string& path, const std::string& what)
        : DataError(path + ": " + what), path_(path) {}
    const std::string& path() const { return path_; }

   private:
    std::string path_;
};

}  // namespace skmae
