import abc


class Serializer(abc.ABC):
    """
    This is a guideline for implementing a serializer for bcrf artifacts.
    Serializers need not subclass this directly, but should match the
    interface defined here.

    """
    @abc.abstractmethod
    def loads(self, data):
        """
        Decode the on-disk representation of an artifact into a Python object.

        :param data: raw file contents
        :type data: bytes or str
        :raises: :class:`bcrf.exceptions.FormatError`
        :returns: object

        """

    @abc.abstractmethod
    def dumps(self, obj):
        """
        Encode a Python object into its on-disk representation.

        :param obj: the object to be written
        :returns: bytes or str

        """
