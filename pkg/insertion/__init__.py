# Vision-driven compliant insertion simulator
