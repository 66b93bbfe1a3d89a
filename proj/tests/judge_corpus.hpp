#pragma once

#include <string>
#include <utility>
#include <vector>

#include "selfreward/errors.hpp"

// Judge outputs that must never yield a score, with the error each one should raise.
// 20 lack a well-formed "Score:" token; 30 have one followed by something that is not 0..5.
inline std::vector<std::pair<std::string, selfreward::ErrorCode>> malformed_verdicts() {
  using selfreward::ErrorCode;
  return {
      {"great answer", ErrorCode::no_score},
      {"", ErrorCode::no_score},
      {"score: 4", ErrorCode::no_score},
      {"SCORE: 4", ErrorCode::no_score},
      {"Score 4", ErrorCode::no_score},
      {"Score : 4", ErrorCode::no_score},
      {"Scor: 4", ErrorCode::no_score},
      {"Points: 4", ErrorCode::no_score},
      {"Total points: 5", ErrorCode::no_score},
      {"Rating: 3", ErrorCode::no_score},
      {"The score is 4", ErrorCode::no_score},
      {"4", ErrorCode::no_score},
      {"Score=4", ErrorCode::no_score},
      {"Score- 3", ErrorCode::no_score},
      {"S core: 2", ErrorCode::no_score},
      {"Scores 5", ErrorCode::no_score},
      {"Sc\nore: 4", ErrorCode::no_score},
      {"justification only, no verdict line", ErrorCode::no_score},
      {"<total points>", ErrorCode::no_score},
      {"score:5 Score 5 SCORE:5", ErrorCode::no_score},
      {"Score:", ErrorCode::out_of_range},
      {"Score: ", ErrorCode::out_of_range},
      {"Score: 6", ErrorCode::out_of_range},
      {"Score: 7", ErrorCode::out_of_range},
      {"Score: 10", ErrorCode::out_of_range},
      {"Score: 100", ErrorCode::out_of_range},
      {"Score: 55", ErrorCode::out_of_range},
      {"Score: 9999", ErrorCode::out_of_range},
      {"Score: -1", ErrorCode::out_of_range},
      {"Score: +3", ErrorCode::out_of_range},
      {"Score: 4.5", ErrorCode::out_of_range},
      {"Score: 2,5", ErrorCode::out_of_range},
      {"Score: four", ErrorCode::out_of_range},
      {"Score: x", ErrorCode::out_of_range},
      {"Score: 5a", ErrorCode::out_of_range},
      {"Score: 1e0", ErrorCode::out_of_range},
      {"Score: 0x3", ErrorCode::out_of_range},
      {"Score: 3/5", ErrorCode::out_of_range},
      {"Score: 3-4", ErrorCode::out_of_range},
      {"Score: (4)", ErrorCode::out_of_range},
      {"Score: <total points>", ErrorCode::out_of_range},
      {"Score: <rating>", ErrorCode::out_of_range},
      {"Score: \n4", ErrorCode::out_of_range},
      {"Score: 3 ... Score: 7", ErrorCode::out_of_range},
      {"Score: 4\nScore: 9", ErrorCode::out_of_range},
      {"Score: 6.", ErrorCode::out_of_range},
      {"Score: \xd9\xa3", ErrorCode::out_of_range},
      {"Score: \xef\xbc\x94", ErrorCode::out_of_range},
      {"Score: .", ErrorCode::out_of_range},
      {"Good. Score: N/A", ErrorCode::out_of_range},
  };
}
