"""File formats read and written by dcfds: RTTM, WAV, DCFT tensors, transcripts, window maps."""
