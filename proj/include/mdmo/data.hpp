#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mdmo/schedule.hpp"

namespace mdmo {

enum class TaskKind { kPairCopy, kTemplatedArithmetic, kUniformRandom };

const char* task_kind_name(TaskKind kind);
TaskKind parse_task_kind(const std::string& name);

/// `vocab_size` counts the non-mask tokens 0 .. vocab_size-1; the mask id is
/// vocab_size.
struct TaskSpec {
  TaskKind kind = TaskKind::kPairCopy;
  int N = 12;
  int prompt_len = 4;
  int vocab_size = 8;
  std::uint64_t seed = 0;

  int mask_id() const { return vocab_size; }
};

void validate_task_spec(const TaskSpec& spec);

enum class Split { kTrain, kTest };

struct Dataset {
  std::vector<Sequence> sequences;
  Split split = Split::kTrain;
  TaskSpec spec;
};

// Templated-arithmetic token ids.
inline constexpr int kPlusToken = 10;
inline constexpr int kEqualsToken = 11;
inline constexpr int kPadToken = 12;

/// Pure function of (spec, count, split); the split selects a disjoint seed
/// stream.
Dataset generate(const TaskSpec& spec, int count, Split split = Split::kTrain);

/// Line format: a header `#mdmo-data v1 N=<n> prompt_len=<p> vocab=<k>`, then
/// one line of space-separated token ids per sequence.
void save_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);
std::string format_dataset(const Dataset& data);
Dataset parse_dataset(const std::string& text);

}  // namespace mdmo
